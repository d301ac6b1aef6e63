"""Command-line entry point: ``atomst <subcommand> ...``.

Exit codes: 0 success, 1 domain failure (invalid data, failed checks),
2 usage error (bad flags, missing paths).
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import AtomstError
from .model import FileKind

logger = logging.getLogger("atomst")

SCHEMA_VERSION = 1
DEFAULT_MODELS = "persistence,historical_average,seasonal_naive,linear_ar"
GRAPH_DEFAULTS = (12, 12)
GRID_DEFAULTS = (6, 1)
GRID_LOW_FLOW = 5.0


class UsageError(Exception):
    """Bad flags or paths; maps to exit code 2."""


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be at least 1")
    return value


def _ratios(text: str) -> tuple[float, float, float]:
    from .pipeline import parse_ratios

    try:
        return parse_ratios(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _threshold(text: str) -> float | None:
    if text.lower() == "none":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError("threshold must be non-negative")
    return value


def _bundle_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{path} is not a directory")
    return p


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        threads = int(os.environ.get("ATOMST_THREADS", "0") or 0) or None
    if threads is None:
        return
    os.environ["ATOMST_THREADS"] = str(threads)
    import pyarrow as pa

    pa.set_cpu_count(threads)
    pa.set_io_thread_count(threads)


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


# -- subcommands ------------------------------------------------------------

def cmd_validate(args: argparse.Namespace) -> int:
    from .atomio import load_bundle
    from .validate import validate_bundle

    report = validate_bundle(load_bundle(_bundle_dir(args.bundle)))
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_text() + "\n")
    return 0 if report.passed else 1


def cmd_stats(args: argparse.Namespace) -> int:
    from .atomio import load_bundle
    from .validate import dataset_stats

    stats = dataset_stats(load_bundle(_bundle_dir(args.bundle)))
    if args.json:
        sys.stdout.write(_dump_json(stats.to_dict()))
    else:
        row = stats.row()
        width = max(len(k) for k in row)
        sys.stdout.write("".join(f"{k:<{width}}  {v}\n" for k, v in row.items()))
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    from .atomio import save_bundle
    from .convert import convert, load_json_config
    from .validate import dataset_stats

    config_path = Path(args.config)
    if not config_path.is_file():
        raise UsageError(f"{args.config} is not a file")
    try:
        config = load_json_config(config_path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
    started = time.perf_counter()
    bundle, manifest = convert(args.source, config, base_dir=config_path.parent)
    out = Path(args.out)
    save_bundle(bundle, out)
    _write_text(out / "manifest.json", _dump_json(manifest))
    row = dataset_stats(bundle).row()
    logger.info("converted in %.1fs", time.perf_counter() - started)
    sys.stdout.write(f"wrote {out}: " + ", ".join(f"{k} {v}" for k, v in row.items()) + "\n")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    from .assemble import assemble
    from .atomio import load_bundle
    from .baselines import MODELS, make_model
    from .metrics import MASK_CHANNEL, ZERO_IS_MISSING, MaskPolicy, evaluate_forecast
    from .pipeline import WindowSpec, prepare

    bundle = load_bundle(_bundle_dir(args.bundle))
    gridded = bundle.kind in (FileKind.GRID, FileKind.GRIDOD)
    input_len, output_len = GRID_DEFAULTS if gridded else GRAPH_DEFAULTS
    spec = WindowSpec(args.input_len or input_len, args.output_len or output_len)
    if args.low_flow_filter is None:
        low_flow = GRID_LOW_FLOW if gridded else None
    else:
        try:
            low_flow = _threshold(args.low_flow_filter)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"--low-flow-filter: {exc}") from None
    policy = MaskPolicy(ZERO_IS_MISSING if args.zero_missing else MASK_CHANNEL, low_flow)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not models:
        raise UsageError("--models is empty")
    for name in models:
        if name not in MODELS:
            raise UsageError(f"unknown model {name!r}; choose from {', '.join(sorted(MODELS))}")

    tensor = assemble(bundle)
    train, valid, test = prepare(tensor, spec, args.split, time_of_day=args.time_of_day,
                                 split_mode=args.split_mode)
    report: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "dataset": bundle.name,
        "kind": bundle.kind.value,
        "tensor_shape": list(tensor.data.shape),
        "time_step": tensor.step,
        "input_len": spec.input_len,
        "output_len": spec.output_len,
        "split_ratios": list(args.split),
        "split_mode": args.split_mode,
        "split_sizes": {"train": len(train), "valid": len(valid), "test": len(test)},
        "time_of_day": args.time_of_day,
        "aggregate": args.aggregate,
        "policy": policy.to_dict(),
        "attributes": list(tensor.attributes),
        "models": {},
    }
    predictions: dict[str, np.ndarray] = {}
    for name in models:
        started = time.perf_counter()
        params = {"season": args.season} if name == "seasonal_naive" and args.season else {}
        if name == "linear_ar" and args.lags:
            params["lags"] = args.lags
        model = make_model(name, **params).fit(train)
        pred = model.predict(test)
        result = evaluate_forecast(pred, test.targets, test.target_mask, policy, args.aggregate,
                                   tensor.attributes)
        elapsed = time.perf_counter() - started
        logger.info("%s: MAE %.4f MAPE %.4f RMSE %.4f (%.1fs)", name, result.mae, result.mape,
                    result.rmse, elapsed)
        report["models"][name] = {**result.to_dict(), "params": model.params(),
                                  "seconds": round(elapsed, 3)}
        predictions[name] = pred
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.predictions != "none":
        pred_path = Path(args.predictions) if args.predictions else out.with_suffix(".npz")
        np.savez(pred_path, truth=np.asarray(test.targets), mask=np.asarray(test.target_mask),
                 times=test.target_times, step=np.int64(tensor.step),
                 **{f"pred__{k}": v for k, v in predictions.items()})
        report["predictions"] = os.path.relpath(pred_path, out.parent)
    _write_text(out, _dump_json(report))
    summary = ", ".join(f"{k} MAE {v['mae']:.4f}" for k, v in report["models"].items())
    sys.stdout.write(f"wrote {out}: {summary}\n")
    return 0


def _load_runs(patterns: Sequence[str]) -> list[tuple[Path, dict[str, Any]]]:
    paths = sorted({Path(p) for pattern in patterns for p in glob.glob(pattern)})
    if not paths:
        raise UsageError(f"no run files match {' '.join(patterns)}")
    runs = []
    for path in paths:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{path}: cannot read run file ({exc})") from None
        if data.get("schema_version") != SCHEMA_VERSION:
            raise AtomstError(f"{path}: unsupported schema_version {data.get('schema_version')!r}")
        runs.append((path, data))
    return runs


def cmd_report(args: argparse.Namespace) -> int:
    from .analytics import rank_models, temporal_profile
    from .metrics import MaskPolicy
    from .plotting import plot_leaderboard, plot_profiles

    runs = _load_runs(args.runs)
    do_board = args.leaderboard or not args.profiles
    do_profiles = args.profiles or not args.leaderboard
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if do_board:
        grid: dict[str, dict[str, dict[str, float]]] = {}
        for path, run in runs:
            for model, result in run["models"].items():
                cell = grid.setdefault(model, {})
                if run["dataset"] in cell:
                    raise AtomstError(f"{path}: duplicate result for {model} on {run['dataset']}")
                cell[run["dataset"]] = {k: result[k] for k in ("mae", "mape", "rmse")}
        board = rank_models(grid)
        for suffix, text in (("json", _dump_json(board.to_dict())), ("csv", board.to_csv()),
                             ("md", board.to_markdown())):
            written.append(out / f"leaderboard.{suffix}")
            _write_text(written[-1], text)
        written.append(out / "leaderboard.svg")
        plot_leaderboard(board, written[-1])

    if do_profiles:
        for path, run in runs:
            if "predictions" not in run:
                logger.warning("%s has no stored predictions; skipping profiles", path)
                continue
            with np.load(path.parent / run["predictions"]) as npz:
                arrays = {k: npz[k] for k in npz.files}
            preds = {k.split("__", 1)[1]: v for k, v in arrays.items() if k.startswith("pred__")}
            policy = MaskPolicy(**run["policy"])
            group_by = args.group_by
            profiles = [
                temporal_profile(preds, arrays["truth"], arrays["mask"], arrays["times"],
                                 group_by, day_class, int(arrays["step"]), policy)
                for day_class in ("weekday", "weekend")
            ]
            stem = f"profile_{run['dataset']}_{group_by}"
            _write_text(out / f"{stem}.json", _dump_json([p.to_dict() for p in profiles]))
            header = ""
            csv_rows, md_parts = [], []
            for p in profiles:
                first, *rest = p.to_csv().splitlines()
                header = "day_class," + first
                csv_rows += [f"{p.day_class},{line}" for line in rest]
                md_parts.append(f"### {run['dataset']} ({p.day_class})\n\n{p.to_markdown()}")
            csv_parts = [header] + csv_rows
            _write_text(out / f"{stem}.csv", "\n".join(csv_parts) + "\n")
            _write_text(out / f"{stem}.md", "\n".join(md_parts))
            plot_profiles(profiles, out / f"{stem}.svg", title=run["dataset"])
            written += [out / f"{stem}.{s}" for s in ("json", "csv", "md", "svg")]
    sys.stdout.write("".join(f"wrote {p}\n" for p in written))
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="cap worker threads (default: $ATOMST_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="atomst", description="Atomic-file toolkit for "
                                     "urban spatial-temporal datasets and forecasting benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a bundle directory")
    p.add_argument("bundle")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", parents=[common], help="print a dataset summary row")
    p.add_argument("bundle")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("convert", parents=[common], help="build a bundle from raw data or a generator")
    p.add_argument("--from", dest="source", required=True, choices=("long", "wide", "synth"))
    p.add_argument("--config", required=True, help="JSON mapping or generator config")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("bench", parents=[common], help="score baselines on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--models", default=DEFAULT_MODELS, help="comma-separated model names")
    p.add_argument("--input-len", type=_positive_int, default=None,
                   help="input steps (default 12 for graph data, 6 for grid data)")
    p.add_argument("--output-len", type=_positive_int, default=None,
                   help="predicted steps (default 12 for graph data, 1 for grid data)")
    p.add_argument("--split", type=_ratios, default=(0.7, 0.1, 0.2), help="train:valid:test, e.g. 7:1:2")
    p.add_argument("--split-mode", choices=("samples", "steps"), default="samples")
    p.add_argument("--low-flow-filter", default=None,
                   help="drop truth below this value, or 'none' (default 5 for grid data)")
    p.add_argument("--zero-missing", action="store_true", help="treat truth == 0 as missing")
    p.add_argument("--aggregate", choices=("pooled", "mean"), default="pooled")
    p.add_argument("--no-time-of-day", dest="time_of_day", action="store_false",
                   help="do not add the time-of-day input channel")
    p.add_argument("--season", type=_positive_int, default=None, help="seasonal_naive season in steps")
    p.add_argument("--lags", type=_positive_int, default=None, help="linear_ar lags")
    p.add_argument("--predictions", default=None,
                   help="where to store test predictions (.npz; default next to --out, 'none' to skip)")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", parents=[common], help="leaderboards and profiles from bench runs")
    p.add_argument("--runs", nargs="+", required=True, help="bench JSON files or glob patterns")
    p.add_argument("--leaderboard", action="store_true")
    p.add_argument("--profiles", action="store_true")
    p.add_argument("--group-by", choices=("time_of_day", "day_of_week"), default="time_of_day")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"atomst {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (AtomstError, OSError) as exc:
        print(f"atomst {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
