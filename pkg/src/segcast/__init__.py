"""segcast: frequent attribute-combination mining and audience-size forecasting."""

from .dataset import (
    AttributeSchema,
    HourlySeries,
    ItemCode,
    TargetDefinition,
    TimeWindow,
    Transaction,
    TransactionLog,
    count_in_window,
    hourly_series,
    load_csv,
    satisfies,
    write_csv,
)
from .mining import (
    ALGORITHMS,
    FISRecord,
    MiningConfig,
    MiningStats,
    brute_force_mine,
    categorical_constraint,
    mine,
    mine_apriori,
    mine_apriori_cc,
    mine_eclat,
    mine_eclat_cc,
    mine_fpgrowth,
    read_fis_file,
    write_fis_file,
)
from .copula import (
    CopulaSpec,
    MarginalSpec,
    ScenarioConfig,
    TimestampPlan,
    cholesky,
    cramers_v_matrix,
    generate,
    generate_scenario,
    inverse_multinomial_cdf,
    make_scenario,
    std_normal_cdf,
)
from .ets import (
    EtsParams,
    ForecastResult,
    fit_ets,
    forecast,
    forecast_window,
    mape,
    read_series_csv,
    write_series_csv,
)
from .estimator import (
    Estimate,
    FISStore,
    UnivariateMember,
    UnivariateSet,
    build_store,
    choose_best_univariate,
    conditional_multiplier,
    estimate,
    estimate_frequent,
    estimate_infrequent,
    estimate_sigma,
    load_store,
    save_store,
)
from .evaluate import (
    BenchmarkSet,
    EvalReport,
    baseline_fb,
    baseline_ts,
    run_benchmark,
    sample_fis,
    sample_ifis,
)

__version__ = "0.1.0"
