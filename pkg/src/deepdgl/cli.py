"""Command line entry point: ``deepdgl synth|train|eval|forecast|plot``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3
numeric divergence during training.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from deepdgl import __version__
from deepdgl.config import VARIANTS, RunConfig, parse_config
from deepdgl.data import (
    SeriesCollection,
    SyntheticSpec,
    collate,
    describe,
    generate_synthetic,
    load_covariates,
    load_csv,
    make_windows,
    phase_covariates,
    split,
    write_csv,
)
from deepdgl.data.windows import DatasetSplits, WindowSample
from deepdgl.errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    SamplingError,
    ShapeError,
)
from deepdgl.model import DeepDGL
from deepdgl.plotting import plot_forecast
from deepdgl.training import (
    Checkpoint,
    Trainer,
    evaluate_inductive,
    evaluate_transductive,
    write_training_curve,
)

logger = logging.getLogger("deepdgl")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class UsageError(Exception):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


# Flags that map onto configuration keys
_CONFIG_FLAGS = {
    "preset": "preset",
    "T": "T",
    "tau": "tau",
    "alpha": "alpha",
    "gamma": "gamma",
    "temperature": "temperature",
    "variant": "variant",
    "lr": "lr",
    "epochs": "epochs",
    "seed": "seed",
    "b_h": "train.b_h",
    "b_v": "train.b_v",
    "stride": "data.stride",
    "values": "data.values_path",
    "covariates": "data.covariates_path",
    "granularity": "data.granularity",
}


def _add_data_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--values", required=required, help="values CSV (series_id,v0,...)")
    parser.add_argument("--covariates", help="covariates CSV (t,c0,...)")
    parser.add_argument("--granularity", help="sampling interval label, e.g. '1 hour'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepdgl", description="Global/local disentangled forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    synth = sub.add_parser("synth", help="write a synthetic panel")
    synth.add_argument("--out", required=True, type=Path)
    synth.add_argument("--n-series", type=int, default=40)
    synth.add_argument("--n-steps", type=int, default=2000)
    synth.add_argument("--prototypes", type=int, default=4)
    synth.add_argument("--period", type=int, default=24)
    synth.add_argument("--local-amplitude", type=float, default=0.5)
    synth.add_argument("--trend-scale", type=float, default=0.0)
    synth.add_argument("--noise-std", type=float, default=0.05)
    synth.add_argument("--homogeneous", action="store_true", help="equal amplitude scales")
    synth.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_args(train)
    train.add_argument("--config", type=Path)
    train.add_argument("--out", required=True, type=Path)
    train.add_argument("--preset")
    train.add_argument("--variant", choices=VARIANTS)
    train.add_argument("--T", type=int, dest="T")
    train.add_argument("--tau", type=int)
    train.add_argument("--alpha", type=float)
    train.add_argument("--gamma", type=float)
    train.add_argument("--temperature", type=float)
    train.add_argument("--lr", type=float)
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--b-h", type=int, dest="b_h")
    train.add_argument("--b-v", type=int, dest="b_v")
    train.add_argument("--stride", type=int)

    evaluate = sub.add_parser("eval", help="score a checkpoint")
    _add_data_args(evaluate)
    evaluate.add_argument("--checkpoint", required=True, type=Path)
    evaluate.add_argument("--mode", choices=("transductive", "inductive"), default="transductive")
    evaluate.add_argument("--variant", choices=VARIANTS)
    evaluate.add_argument("--out", required=True, type=Path)

    forecast = sub.add_parser("forecast", help="forecast tau steps past the end of each series")
    _add_data_args(forecast)
    forecast.add_argument("--checkpoint", required=True, type=Path)
    forecast.add_argument(
        "--future-covariates",
        type=Path,
        help="covariates CSV for the forecast steps (t = n_steps, ...)",
    )
    forecast.add_argument("--series", nargs="*", help="series ids (default: all)")
    forecast.add_argument("--out", required=True, type=Path)

    plot = sub.add_parser("plot", help="one SVG per series: actual vs forecast")
    _add_data_args(plot)
    plot.add_argument("--checkpoint", required=True, type=Path)
    plot.add_argument("--series", nargs="+", type=int, required=True, help="series indices")
    plot.add_argument("--out", required=True, type=Path)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def _load(values: str, covariates: Optional[str], granularity: Optional[str]) -> SeriesCollection:
    collection = load_csv(values, covariates, granularity=granularity or "1 hour")
    logger.info("Loaded %s", describe(collection))
    return collection


def _manifest_path(out: Path) -> Path:
    """Manifest next to a file output: ``run/eval.csv`` -> ``run/eval.manifest.txt``."""
    return out.with_name(f"{out.stem if out.suffix else out.name}.manifest.txt")


def _write_manifest(path: Path, command: str, entries: dict[str, Any]) -> None:
    lines = [
        f"# deepdgl {__version__}",
        f"command = {json.dumps(command)}",
        f"version = {json.dumps(__version__)}",
    ]
    lines.extend(f"{key} = {json.dumps(value)}" for key, value in entries.items())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote run manifest %s", path)


def _checkpoint_entries(
    args: argparse.Namespace, ckpt: Checkpoint, granularity: Optional[str]
) -> dict[str, Any]:
    """What a checkpoint command read: the checkpoint and its seeds, plus the data files."""
    m = ckpt.manifest
    return {
        "checkpoint": str(args.checkpoint),
        "checkpoint.sha256": ckpt.checksum(),
        "variant": ckpt.variant,
        "train.seed": m.get("train.seed"),
        "split.seed": m.get("split.seed"),
        "data.values_path": str(args.values),
        "data.covariates_path": None if args.covariates is None else str(args.covariates),
        "data.granularity": granularity or "1 hour",
        "data.covariate_period": m.get("data.covariate_period"),
        "out": str(args.out),
    }


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(
        n_series=args.n_series,
        n_steps=args.n_steps,
        n_global_prototypes=args.prototypes,
        period=args.period,
        local_amplitude=args.local_amplitude,
        heterogeneous=not args.homogeneous,
        trend_scale=args.trend_scale,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    panel = generate_synthetic(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(panel.collection, args.out / "values.csv", args.out / "covariates.csv")
    panel.write_assignments(args.out / "assignments.csv")
    entries = {f"synth.{key}": value for key, value in spec.model_dump(mode="json").items()}
    _write_manifest(args.out / "run_manifest.txt", "synth", entries)
    logger.info("Wrote synthetic panel to %s: %s", args.out, describe(panel.collection))
    return EXIT_OK


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        key: getattr(args, attr) for attr, key in _CONFIG_FLAGS.items() if hasattr(args, attr)
    }
    return parse_config(args.config, overrides)


def _with_data_covariates(run: RunConfig, collection: SeriesCollection) -> RunConfig:
    width = 2 if collection.covariates is None else collection.covariates.shape[1]
    if run.provenance.get("model.n_covariates", "default") != "default":
        return run
    return run.model_copy(update={"model": run.model.model_copy(update={"n_covariates": width})})


def _splits_for(ckpt: Checkpoint, collection: SeriesCollection) -> DatasetSplits:
    m = ckpt.manifest
    return split(
        collection,
        seed=m["split.seed"],
        T=m["split.T"],
        tau=m["split.tau"],
        stride=m["split.stride"],
        covariate_period=m.get("data.covariate_period"),
    )


def _cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    collection = _load(args.values, args.covariates, run.data.granularity)
    run = _with_data_covariates(run, collection)
    splits = split(
        collection,
        seed=run.train.seed,
        T=run.model.input_length,
        tau=run.model.horizon,
        stride=run.data.stride,
        covariate_period=run.data.covariate_period,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    manifest_text = f"# deepdgl {__version__}\n" + run.dump()
    (args.out / "run_manifest.txt").write_text(manifest_text, encoding="utf-8")

    flat = run.flat()
    extra = {k: v for k, v in flat.items() if k.startswith("data.")}
    extra["version"] = __version__
    trainer = Trainer(splits, run.model, run.train, manifest=extra)
    try:
        ckpt = trainer.fit()
    finally:
        if trainer.history:
            write_training_curve(trainer.history, args.out / "training_curve.csv")
    ckpt.save(args.out / "checkpoint.ckpt")
    print(f"checkpoint {args.out / 'checkpoint.ckpt'} sha256 {ckpt.checksum()}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    if args.variant is not None and args.variant != ckpt.variant:
        raise ConfigurationError(
            f"Checkpoint was trained as variant '{ckpt.variant}', not '{args.variant}'"
        )
    granularity = args.granularity or ckpt.manifest.get("data.granularity")
    collection = _load(args.values, args.covariates, granularity)
    splits = _splits_for(ckpt, collection)
    if args.mode == "inductive":
        report = evaluate_inductive(ckpt, splits)
    else:
        report = evaluate_transductive(ckpt, splits)
    report.write_csv(args.out)
    _write_manifest(
        _manifest_path(args.out),
        "eval",
        {**_checkpoint_entries(args, ckpt, granularity), "mode": args.mode},
    )
    print(
        f"{args.mode} {ckpt.variant}: MAPE={report.mape:.4f} WAPE={report.wape:.4f} "
        f"SMAPE={report.smape:.4f} windows={report.n_windows}"
    )
    return EXIT_OK


def _last_windows(
    ckpt: Checkpoint, collection: SeriesCollection, indices: Sequence[int]
) -> list[WindowSample]:
    cfg = ckpt.model_config
    return make_windows(
        collection,
        cfg.input_length,
        cfg.horizon,
        series=list(indices),
        min_start=collection.n_steps - cfg.input_length - cfg.horizon,
        covariate_period=ckpt.manifest.get("data.covariate_period"),
    )


def _forecast_last(
    model: DeepDGL, windows: Sequence[WindowSample]
) -> list[tuple[WindowSample, np.ndarray]]:
    preds = model.forecast_batch(collate(windows)).numpy()
    return list(zip(windows, preds))


def _future_covariates(
    ckpt: Checkpoint, collection: SeriesCollection, future_path: Optional[Path]
) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Covariate rows of the last ``T`` observed steps and of the ``tau`` steps after them.

    A panel without covariates gets its phase pair extended past the end;
    otherwise the future rows come from ``future_path``.
    """
    cfg = ckpt.model_config
    n, length, horizon = collection.n_steps, cfg.input_length, cfg.horizon
    if cfg.n_covariates == 0:
        return None, None
    if collection.covariates is None:
        period = ckpt.manifest.get("data.covariate_period") or collection.default_period
        phase = phase_covariates(n + horizon, period)
        history, future = phase[n - length : n], phase[n:]
    else:
        if future_path is None:
            raise DataError(
                f"Model uses {cfg.n_covariates} covariates; pass --future-covariates with "
                f"rows t = {n}..{n + horizon - 1}"
            )
        history = np.array(collection.covariates[n - length :])
        future = load_covariates(future_path, horizon, start=n)
    for name, block in (("input", history), ("future", future)):
        if block.shape[1] != cfg.n_covariates:
            raise DataError(
                f"Model uses {cfg.n_covariates} covariates, the {name} covariates have "
                f"{block.shape[1]}"
            )
    return history, future


def _cmd_forecast(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    granularity = args.granularity or ckpt.manifest.get("data.granularity")
    collection = _load(args.values, args.covariates, granularity)
    try:
        ids = args.series or list(collection.series_ids)
        indices = [collection.index_of(s) for s in ids]
    except KeyError as exc:
        raise DataError(f"Unknown series id {exc}") from None
    length, n = ckpt.model_config.input_length, collection.n_steps
    if n < length:
        raise DataError(f"Series have {n} steps, the model needs an input window of {length}")
    history, future = _future_covariates(ckpt, collection, args.future_covariates)

    model = ckpt.build_model()
    rows = []
    for i in indices:
        pred = model.forecast(collection.values[i, n - length :], future, history)
        series_id = collection.series_ids[i]
        rows.extend((series_id, n + h, float(value)) for h, value in enumerate(pred))
    frame = pd.DataFrame(rows, columns=["series_id", "step", "forecast"])
    frame.to_csv(args.out, index=False, float_format="%.17g")
    entries = _checkpoint_entries(args, ckpt, granularity)
    entries["future_covariates_path"] = (
        None if args.future_covariates is None else str(args.future_covariates)
    )
    entries["series"] = [collection.series_ids[i] for i in indices]
    _write_manifest(_manifest_path(args.out), "forecast", entries)
    logger.info("Wrote %d forecasts to %s", len(indices), args.out)
    return EXIT_OK


def _cmd_plot(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    granularity = args.granularity or ckpt.manifest.get("data.granularity")
    collection = _load(args.values, args.covariates, granularity)
    bad = [i for i in args.series if not 0 <= i < collection.n_series]
    if bad:
        raise DataError(
            f"Series index {bad[0]} is out of range for {collection.n_series} series"
        )
    args.out.mkdir(parents=True, exist_ok=True)
    # The last full window, so the forecast can be drawn against observed values
    results = _forecast_last(ckpt.build_model(), _last_windows(ckpt, collection, args.series))
    for window, pred in results:
        series_id = collection.series_ids[window.series_index]
        path = plot_forecast(
            window.raw_input(),
            pred,
            args.out / f"{window.series_index:04d}_{series_id}.svg",
            truth=window.raw_target(),
            start=window.start,
            title=f"{series_id} ({ckpt.variant})",
        )
        print(path)
    entries = {**_checkpoint_entries(args, ckpt, granularity), "series": list(args.series)}
    _write_manifest(args.out / "run_manifest.txt", "plot", entries)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "forecast": _cmd_forecast,
    "plot": _cmd_plot,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"deepdgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print("deepdgl: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE

    _configure_logging(args.verbose)
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"deepdgl: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigurationError, ValidationError, UsageError) as exc:
        print(f"deepdgl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, SamplingError, FileNotFoundError) as exc:
        print(f"deepdgl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
