"""Command-line entry point: ``rtf-forge <command> --config PATH [...]``.

Exit codes: 0 success, 2 usage or validation failure, 3 runtime or numeric
failure. Every output file is written to a temporary sibling and renamed into
place, so a failed command never leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import dataset as ds
from . import experiments as ex
from .config import MODEL_KINDS, ExperimentConfig, config_from_dict, load_config
from .container import atomic_write_text
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    FormatError,
    GeometryError,
    NumericError,
    RtfForgeError,
    SizeError,
)
from .evaluate import curve_text, write_report
from .nn import history_rows
from .regressors import EmptyRegionError, Geometry, load_regressor, save_regressor
from .rtf import blocks

log = logging.getLogger("rtf_forge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(RtfForgeError):
    """Bad flags, missing inputs, or incompatible files."""


class RuntimeFailure(RtfForgeError):
    """A well-formed request that failed while running."""


# -- helpers ----------------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _config(args) -> ExperimentConfig:
    if args.config is None:
        return config_from_dict({})
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path) -> ds.DatasetFile:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    return ds.load(path)


def _write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _fmt(v) -> str:
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _write_table(path, rows: list[dict]) -> None:
    header = list(rows[0]) if rows else []
    _write_csv(path, header, [[_fmt(r[k]) for k in header] for r in rows])


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True))


def _check_compatible(model_header: dict, data_header: dict) -> None:
    """Model and dataset must agree on the spectral grid and target layout."""
    for key in ("fft_size", "n_bins", "layout"):
        want = model_header.get(key)
        have = data_header.get(key)
        if want is not None and have != want:
            raise UsageError(f"dataset {key}={have!r} does not match the model's {key}={want!r}")


# -- commands ---------------------------------------------------------------------------------


def cmd_gen(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    room, mics = ex.build_room(cfg), ex.build_mics(cfg)
    data = ds.generate_dataset(room, mics, ex.build_grid(cfg), ex.measurement(cfg), cfg.measurement.seed, ex.air_length(cfg))
    parts = dict(zip(("train", "dev", "test"), ds.split(data, cfg.measurement.split, cfg.measurement.seed)))
    ds.save(data, out / "lattice.rtfd")
    for name, part in parts.items():
        ds.save(part, out / f"{name}.rtfd")
    ds.write_manifest(out / "manifest.json", {"lattice": data, **parts}, {"config": cfg.to_dict()})
    for name, part in {"lattice": data, **parts}.items():
        print(f"{name}: {len(part)} rows")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    kind = args.model or cfg.model.kind
    if kind not in MODEL_KINDS:
        raise UsageError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind == "free_field":
        raise UsageError("model kind free_field requires no training")
    out = _out_dir(args, cfg)
    data_dir = Path(args.data) if args.data else out
    train = _load_dataset(args.train or data_dir / "train.rtfd")
    dev = _load_dataset(args.dev or data_dir / "dev.rtfd") if kind == "dnn" else None
    if kind == "linear" and cfg.model.linear.mode == "axis" and train.grid is None:
        raise UsageError("axis interpolation needs a dataset carrying grid metadata")
    try:
        reg = ex.fit_regressor(kind, cfg, train, dev)
    except EmptyRegionError as exc:
        raise RuntimeFailure(str(exc)) from exc
    extra = {k: train.header[k] for k in ("fft_size", "n_bins", "layout", "sample_rate")}
    save_regressor(reg, out / "model.rtfm", train.geometry, extra)
    if kind == "dnn":
        rows = history_rows(reg.history)
        _write_csv(out / "history.csv", list(rows[0]), [[_fmt(v) for v in r.values()] for r in rows])
        print(f"trained {kind}: {len(rows)} epochs, best epoch {reg.best_epoch}")
    else:
        diag = {"kind": kind, "n_train": len(train), **reg.header()}
        _write_json(out / "fit.json", diag)
        print(f"fitted {kind} on {len(train)} rows")
    return EXIT_OK


def _model_for_eval(args, cfg: ExperimentConfig, out: Path):
    spec = args.model or str(out / "model.rtfm")
    if spec == "free_field":
        geometry = Geometry(
            tuple(tuple(map(float, p)) for p in cfg.mics.positions), cfg.room.speed_of_sound, cfg.room.sample_rate
        )
        return ex.make_regressor("free_field", cfg, geometry), {}
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"model checkpoint not found: {path}")
    return load_regressor(path)


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)
    reg, header = _model_for_eval(args, cfg, out)
    if args.data or cfg.eval.target == "test_split":
        data = _load_dataset(args.data or out / "test.rtfd")
    else:
        data = ex.eval_dataset(cfg)
    _check_compatible(header, data.header)
    report = ex.score(reg, data, target=("file" if args.data or cfg.eval.target == "test_split" else "random"))
    write_report(report, out / "report.json")
    fa = ex.cfg_aliasing(cfg)
    atomic_write_text(out / "curve.csv", curve_text(report, data.header["sample_rate"], fa))
    print(f"{reg.kind}: {report.summary()}")
    return EXIT_OK


def _sweep_outputs(out: Path, name: str, result: ex.SweepResult, cfg: ExperimentConfig) -> None:
    _write_table(out / f"{name}.csv", result.rows)
    fa = ex.cfg_aliasing(cfg)
    curves = out / f"{name}_curves"
    curves.mkdir(exist_ok=True)
    for key, rep in result.reports.items():
        tag = "_".join(_fmt(k) for k in key)
        atomic_write_text(curves / f"{tag}.csv", curve_text(rep, cfg.room.sample_rate, fa))
    for row in result.rows:
        print(", ".join(f"{k}={_fmt(v)}" for k, v in row.items()))


def _models_arg(args, cfg) -> list[str] | None:
    if not args.model:
        return None
    models = [m for m in args.model.replace(",", " ").split()]
    bad = [m for m in models if m not in MODEL_KINDS]
    if bad:
        raise UsageError(f"unknown model kind(s) {bad}; expected entries from {MODEL_KINDS}")
    return models


def cmd_sweep_distance(args, cfg: ExperimentConfig) -> int:
    factors = _int_list(args.factors) if args.factors is not None else list(cfg.sweep.factors)
    if not factors or min(factors) < 1:
        raise UsageError("--factors needs one or more integers >= 1")
    models = _models_arg(args, cfg)
    out = _out_dir(args, cfg)
    lattice = _load_dataset(args.data) if args.data else None
    result = ex.sweep_distance(cfg, factors, models, lattice=lattice)
    _sweep_outputs(out, "sweep_distance", result, cfg)
    return EXIT_OK


def cmd_sweep_snr(args, cfg: ExperimentConfig) -> int:
    snrs = _float_list(args.snrs) if args.snrs is not None else list(cfg.sweep.snrs)
    if not snrs:
        raise UsageError("--snrs needs at least one value")
    models = _models_arg(args, cfg)
    out = _out_dir(args, cfg)
    result = ex.sweep_snr(cfg, snrs, models)
    _sweep_outputs(out, "sweep_snr", result, cfg)
    return EXIT_OK


def cmd_repeat_measure(args, cfg: ExperimentConfig) -> int:
    repeats = args.repeats if args.repeats is not None else cfg.sweep.repeats
    if repeats < 2:
        raise UsageError("--repeats must be at least 2")
    out = _out_dir(args, cfg)
    report = ex.repeat_measure(cfg, repeats, args.duration)
    write_report(report, out / "repeat_measure.json")
    atomic_write_text(out / "repeat_measure_curve.csv", curve_text(report, cfg.room.sample_rate, ex.cfg_aliasing(cfg)))
    print(report.summary())
    return EXIT_OK


def cmd_export_features(args, cfg: ExperimentConfig) -> int:
    if not args.data:
        raise UsageError("export-features needs --data PATH")
    data = _load_dataset(args.data)
    if data.header.get("layout", "ild_sincos") != "ild_sincos":
        raise UsageError("export-features needs the ild_sincos layout")
    ild = blocks(data.targets)[0]
    target = Path(args.out) if args.out else Path(args.data).with_suffix(".ild.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in ild:
        w.writerow([f"{v:.6g}" for v in row])
    atomic_write_text(target, buf.getvalue())
    print(f"wrote {len(ild)} rows x {ild.shape[1]} columns to {target}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-distance": cmd_sweep_distance,
    "sweep-snr": cmd_sweep_snr,
    "repeat-measure": cmd_repeat_measure,
    "export-features": cmd_export_features,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rtf-forge", description="RTF simulation, regression and evaluation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON experiment config (defaults to the desk-scale setup)")
        p.add_argument("--out", help="output directory (output file for export-features)")
        p.add_argument("--model", help="model kind (train, sweeps: comma list) or checkpoint path / free_field (eval)")
        p.add_argument("--data", help="dataset file or directory, depending on the command")
        if name == "train":
            p.add_argument("--train", help="training dataset (default <data>/train.rtfd)")
            p.add_argument("--dev", help="development dataset (default <data>/dev.rtfd)")
        if name == "sweep-distance":
            p.add_argument("--factors", help="decimation factors, e.g. 1,2,4")
        if name == "sweep-snr":
            p.add_argument("--snrs", help="SNRs in dB, e.g. 30,20,10")
        if name == "repeat-measure":
            p.add_argument("--repeats", type=int, help="number of repeated measurements")
            p.add_argument("--duration", type=float, help="excitation length in seconds")
    return parser


USAGE_ERRORS = (UsageError, ConfigError, FormatError, ContractError, GeometryError, SizeError, FileNotFoundError)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"rtf-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (RuntimeFailure, NumericError, EmptyRegionError) as exc:
        print(f"rtf-forge: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except USAGE_ERRORS as exc:
        print(f"rtf-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"rtf-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RtfForgeError, ArithmeticError, MemoryError, OSError) as exc:
        print(f"rtf-forge: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
