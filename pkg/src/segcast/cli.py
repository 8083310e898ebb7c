"""Command-line front end: simulate, mine, build-store, forecast, evaluate.

Exit codes: 0 on success, 2 for usage errors, 1 for runtime errors.
Machine-parsable output lines are prefixed with `STAT `.
"""

from __future__ import annotations

import argparse
import statistics
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import copula, dataset, estimator, evaluate, mining

DAY = 24 * dataset.HOUR


@dataclass(frozen=True)
class BenchProtocol:
    """Timing protocol for the mine subcommand: mean wall time over `runs`
    per algorithm, optionally after one untimed warmup run."""

    runs: int = 3
    supports: tuple[int | float, ...] = (0.01, 0.05, 0.10)
    algorithms: tuple[str, ...] = ("eclat", "eclat_cc")
    warmup: bool = False


def _parse_support(text: str) -> int | float:
    """`N%` means a fraction of the row count (resolved with ceiling); a bare
    integer is an absolute count."""
    text = text.strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100.0
    return int(text)


def _parse_when(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _stat(command: str, **fields) -> None:
    rendered = " ".join(f"{k}={v}" for k, v in fields.items())
    print(f"STAT {command} {rendered}")


def _add_simulate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("simulate", help="generate a synthetic CSV event log")
    p.add_argument("--attrs", type=int, default=8, help="attribute count (8, 16 or 32)")
    p.add_argument("--attrs-any", action="store_true", help="allow attribute counts off the grid")
    p.add_argument("--values", type=int, default=8, help="values per attribute")
    p.add_argument("--corr", choices=("high", "low"), default="high")
    p.add_argument("--marginals", choices=("steep", "flat"), default="steep")
    p.add_argument("--rows", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timestamps", choices=("uniform", "daily-sine"), default="uniform")
    p.add_argument("--start", default="0", help="epoch seconds or ISO-8601 (default epoch 0)")
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--amplitude", type=float, default=0.5, help="daily-sine amplitude in [0,1)")
    p.add_argument("--config", help="key=value file providing flag defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)


def _cmd_simulate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.attrs not in copula.SCENARIO_K and not args.attrs_any:
        parser.error(
            f"--attrs {args.attrs} is off the {copula.SCENARIO_K} grid; pass --attrs-any to allow it"
        )
    cfg = copula.ScenarioConfig.create(
        k=args.attrs,
        correlation=args.corr,
        marginal_shape=args.marginals,
        rows=args.rows,
        seed=args.seed,
        values=args.values,
        allow_any_k=args.attrs_any,
    )
    start = _parse_when(args.start)
    if args.timestamps == "uniform":
        plan = copula.TimestampPlan.uniform(start, start + args.days * DAY)
    else:
        plan = copula.TimestampPlan.daily_sine(start, args.days, args.amplitude)
    spec = copula.make_scenario(cfg)
    log = copula.generate(spec, cfg.rows, cfg.seed, plan)
    dataset.write_csv(log, args.out)
    print(f"copula: {spec.summary()}")
    _stat(
        "simulate",
        rows=len(log),
        attrs=cfg.k,
        corr=cfg.correlation,
        marginals=cfg.marginal_shape,
        seed=cfg.seed,
        out=args.out,
    )
    return 0


def _add_mine(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("mine", help="mine frequent itemsets from a CSV log")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument(
        "--algo",
        default="eclat_cc",
        help="algorithm name; a comma-separated list is allowed with --bench",
    )
    p.add_argument(
        "--support",
        required=True,
        help="absolute count, or N%% of rows; a comma-separated grid is allowed with --bench",
    )
    p.add_argument("--max-size", type=int, default=None)
    p.add_argument("--out", help="frequent-itemset output file")
    p.add_argument("--bench", action="store_true", help="time the mining runs")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--warmup", action="store_true", help="one untimed run first")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_mine)


def _cmd_mine(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    algorithms = tuple(a.strip() for a in args.algo.split(","))
    for algo in algorithms:
        if algo not in mining.ALGORITHMS:
            parser.error(f"unknown algorithm {algo!r}; choose from {mining.ALGORITHMS}")
    support_texts = tuple(s.strip() for s in args.support.split(","))
    if not args.bench and (len(algorithms) > 1 or len(support_texts) > 1):
        parser.error("multiple algorithms or supports require --bench")
    try:
        supports = tuple(_parse_support(s) for s in support_texts)
    except ValueError:
        parser.error(f"cannot parse --support {args.support!r}")

    protocol = BenchProtocol(
        runs=args.runs if args.bench else 1,
        supports=supports,
        algorithms=algorithms,
        warmup=args.bench and args.warmup,
    )
    log = dataset.load_csv(args.input)
    first_records = None
    for support_text, support in zip(support_texts, protocol.supports):
        for algo in protocol.algorithms:
            cfg = mining.MiningConfig(support, algo, args.max_size)
            if protocol.warmup:
                mining.mine(log, cfg, threads=args.threads)
            times = []
            records = []
            stats = mining.MiningStats()
            for _ in range(protocol.runs):
                records, stats = mining.mine(log, cfg, threads=args.threads)
                times.append(stats.wall_time)
            if first_records is None:
                first_records = records
            _stat(
                "mine",
                algo=algo,
                support=support_text,
                kappa=cfg.resolve_threshold(len(log)),
                fis=len(records),
                candidates=stats.candidates_generated,
                rejected_cc=stats.candidates_rejected_by_cc,
                intersections=stats.tidlist_intersections,
                runs=protocol.runs,
                wall_mean=f"{statistics.fmean(times):.6f}",
            )
    if args.out and first_records is not None:
        mining.write_fis_file(args.out, log.schema, first_records)
    return 0


def _add_build_store(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("build-store", help="mine a training window and fit univariate forecasters")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--support", required=True, help="absolute count, or N%% of window rows")
    p.add_argument("--train-start", default=None, help="epoch or ISO; default: first hour boundary")
    p.add_argument("--train-hours", type=int, default=144)
    p.add_argument("--out", required=True, help="store base path (writes .fis/.univ/.meta.json)")
    p.set_defaults(func=_cmd_build_store)


def _cmd_build_store(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    log = dataset.load_csv(args.input)
    if args.train_start is not None:
        start = _parse_when(args.train_start)
    else:
        if len(log) == 0:
            raise ValueError("cannot derive a training window from an empty log")
        start = int(log.timestamps[0])
        start -= start % dataset.HOUR
    window = dataset.TimeWindow(start, start + args.train_hours * dataset.HOUR)
    support = _parse_support(args.support)
    store, uset = estimator.build_store(log, window, support)
    estimator.save_store(store, uset, args.out)
    _stat(
        "build-store",
        n_train=store.n_train,
        kappa=store.kappa,
        fis=len(store),
        univariates=len(uset.members),
        out=args.out,
    )
    return 0


def _add_forecast(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("forecast", help="forecast audience size for one target")
    p.add_argument("--store", required=True, help="store base path from build-store")
    p.add_argument("--target", required=True, help='e.g. "country=US,browser=Chrome"; omitted attrs are wildcards')
    p.add_argument("--hours", type=int, default=24, help="horizon length after the training window")
    p.set_defaults(func=_cmd_forecast)


def _cmd_forecast(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    store, uset = estimator.load_store(args.store)
    target = dataset.TargetDefinition.parse(store.schema, args.target)
    horizon = dataset.TimeWindow(
        store.window.end, store.window.end + args.hours * dataset.HOUR
    )
    est = estimator.estimate(store, uset, target, horizon)
    chosen = "*" if est.chosen is None else store.schema.item_label(est.chosen)
    print(f"target:     {target.render(store.schema)}")
    print(f"horizon:    {args.hours}h from {store.window.end}")
    print(f"point:      {est.point:.3f}")
    print(f"sigma:      {est.sigma:.3f}")
    print(f"univariate: {chosen}")
    print(f"method:     {est.method}")
    _stat(
        "forecast",
        target=f'"{target.render(store.schema)}"',
        point=repr(est.point),
        sigma=repr(est.sigma),
        multiplier=repr(est.multiplier),
        univariate=f'"{chosen}"',
        method=est.method,
    )
    return 0


def _add_evaluate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("evaluate", help="run the full benchmark protocol on a 7-day log")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--support", required=True, help="absolute count, or N%% of training rows")
    p.add_argument("--fis", type=int, default=500, help="frequent targets to sample")
    p.add_argument("--ifis", type=int, default=500, help="infrequent targets to sample")
    p.add_argument("--fis-seed", type=int, default=1)
    p.add_argument("--ifis-seed", type=int, default=2)
    p.add_argument("--fb-threshold", default="0.5%", help="FB univariate share threshold")
    p.add_argument("--ifis-support", default=None, help="pool threshold; default kappa/10")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_evaluate)


def _cmd_evaluate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    log = dataset.load_csv(args.input)
    support = _parse_support(args.support)
    fb_threshold = _parse_support(args.fb_threshold)
    if not isinstance(fb_threshold, float):
        parser.error("--fb-threshold must be a percentage, e.g. 0.5%")
    ifis_kappa = int(args.ifis_support) if args.ifis_support is not None else None
    report, bench, store, _ = evaluate.run_benchmark(
        log,
        support,
        fis_count=args.fis,
        ifis_count=args.ifis,
        fis_seed=args.fis_seed,
        ifis_seed=args.ifis_seed,
        fb_threshold=fb_threshold,
        ifis_kappa_prime=ifis_kappa,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    report.hours_to_csv(out / "hours.csv")
    (out / "summary.txt").write_text(report.summary_text(), encoding="utf-8")
    print(report.summary_text(), end="")
    _stat(
        "evaluate",
        kappa=store.kappa,
        fis_sampled=len(bench.fis_targets),
        ifis_sampled=len(bench.ifis_targets),
        out=str(out),
        wall=f"{report.meta['wall_time']:.3f}",
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segcast",
        description="Mine frequent attribute combinations and forecast audience sizes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_mine(sub)
    _add_build_store(sub)
    _add_forecast(sub)
    _add_evaluate(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    # a --config file (simulate only) provides defaults that explicit flags override
    if "--config" in argv:
        position = argv.index("--config")
        if position + 1 >= len(argv):
            parser.error("--config requires a file path")
        config_path = argv[position + 1]
        defaults = {}
        for key, value in _read_config_file(config_path).items():
            if key in ("attrs_any",):
                defaults[key] = value.lower() in ("1", "true", "yes")
            elif key in ("attrs", "values", "rows", "seed", "days"):
                defaults[key] = int(value)
            elif key == "amplitude":
                defaults[key] = float(value)
            else:
                defaults[key] = value
        parser.set_defaults(**defaults)

    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except BrokenPipeError:
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
