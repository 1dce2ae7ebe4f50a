"""Experiment orchestration shared by the CLI and the scripts.

Sweeps train on full lattices (decimated for the distance sweep), use a
seeded set of off-lattice development poses for early stopping, and score
every model on one shared set of off-lattice evaluation poses whose targets
are exact AIR ratios.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import nn
from .config import ExperimentConfig
from .errors import DataError
from .evaluate import EvalReport, aliasing_frequency, mae_per_freq, measurement_error_experiment
from .regressors import (
    DnnConfig,
    DnnRegressor,
    FreeFieldRegressor,
    LinearInterpModel,
    PiecewiseAffineModel,
    Regressor,
)
from .room_sim import MicArray, Pose, RoomSpec

log = logging.getLogger(__name__)


def build_room(cfg: ExperimentConfig) -> RoomSpec:
    r = cfg.room
    return RoomSpec.from_rt60(r.dims, r.rt60, r.speed_of_sound, r.sample_rate)


def build_mics(cfg: ExperimentConfig) -> MicArray:
    return MicArray(tuple(Pose(tuple(p)) for p in cfg.mics.positions))


def build_grid(cfg: ExperimentConfig) -> ds.SamplingGrid:
    g = cfg.grid
    return ds.build_grid(g.origin, g.extent, g.spacing, build_room(cfg))


def air_length(cfg: ExperimentConfig) -> int:
    return cfg.room.air_length or ds.default_air_length(build_room(cfg))


def measurement(cfg: ExperimentConfig, snr_db: float | None = ..., mode: str | None = None) -> ds.Measurement:
    m = cfg.measurement
    return ds.Measurement(
        mode=mode or m.mode,
        duration=m.duration,
        snr_db=m.snr_db if snr_db is ... else snr_db,
        normalize_direct=m.normalize_direct,
        layout=m.layout,
    )


def eval_box(cfg: ExperimentConfig, factor: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Origin and extent of the region covered by the lattice decimated by ``factor``.

    Axis-pair interpolation cannot extrapolate, so evaluation poses are drawn
    inside the hull of the coarsest lattice they will be scored against.
    """
    grid = build_grid(cfg)
    counts = np.asarray(grid.counts)
    top = ((counts - 1) // factor) * factor
    return np.asarray(grid.origin, float), top * grid.spacing


def eval_dataset(cfg: ExperimentConfig, factor: int = 1) -> ds.DatasetFile:
    origin, extent = eval_box(cfg, factor)
    pos = ds.random_positions(origin, extent, cfg.eval.n_eval_poses, cfg.eval.eval_seed)
    exact = measurement(cfg, snr_db=None, mode="analytic")
    return ds.generate_dataset(build_room(cfg), build_mics(cfg), pos, exact, cfg.eval.eval_seed, air_length(cfg))


def dev_dataset(cfg: ExperimentConfig, meas: ds.Measurement, factor: int = 1) -> ds.DatasetFile:
    origin, extent = eval_box(cfg, factor)
    pos = ds.random_positions(origin, extent, cfg.eval.n_dev_poses, cfg.eval.dev_seed)
    return ds.generate_dataset(build_room(cfg), build_mics(cfg), pos, meas, cfg.eval.dev_seed, air_length(cfg))


def dnn_config(cfg: ExperimentConfig) -> DnnConfig:
    d = cfg.model.dnn
    train = nn.TrainConfig(
        batch_size=d.batch_size,
        max_epochs=d.max_epochs,
        patience=d.patience,
        learning_rate=d.learning_rate,
        lr_decay=d.lr_decay,
        lr_floor=d.lr_floor,
        seed=d.seed,
        renorm_in_training=d.renorm_in_training,
        dtype=d.dtype,
        min_steps_per_epoch=d.min_steps_per_epoch,
    )
    return DnnConfig(hidden=list(d.hidden), normalize_direct=d.normalize_direct, train=train)


def make_regressor(kind: str, cfg: ExperimentConfig, geometry) -> Regressor:
    m = cfg.model
    if kind == "free_field":
        return FreeFieldRegressor(geometry)
    if kind == "linear":
        return LinearInterpModel(m.linear.mode, m.linear.neighbors, m.linear.power, m.linear.axis)
    if kind == "affine":
        return PiecewiseAffineModel(m.affine.n_regions, m.affine.seed, m.affine.ridge)
    if kind == "dnn":
        return DnnRegressor(dnn_config(cfg), geometry)
    raise DataError(f"unknown model kind {kind!r}")


def fit_regressor(kind: str, cfg: ExperimentConfig, train: ds.DatasetFile, dev: ds.DatasetFile | None) -> Regressor:
    reg = make_regressor(kind, cfg, train.geometry)
    if kind == "linear":
        reg.fit(train.poses, train.targets, train.grid)
    elif kind == "affine":
        reg.fit(train.poses, train.targets)
    elif kind == "dnn":
        if dev is None:
            raise DataError("the MLP needs a development set")
        reg.fit(train.poses, train.targets, dev.poses, dev.targets)
    return reg


def score(reg: Regressor, evalset: ds.DatasetFile, **meta) -> EvalReport:
    preds = reg.predict(evalset.poses)
    targets = evalset.targets.astype(float)
    return mae_per_freq(preds, targets, {"regressor": reg.kind, **meta})


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)
    reports: dict[tuple, EvalReport] = field(default_factory=dict)

    def add(self, key: tuple, condition: dict, report: EvalReport) -> None:
        self.reports[key] = report
        self.rows.append(
            {
                **condition,
                "ild_mae": report.ild_mae_mean,
                "ild_ci": report.ild_ci_mean,
                "ipd_mae": report.ipd_mae_mean,
                "ipd_ci": report.ipd_ci_mean,
                "n_eval": report.n_samples,
            }
        )


def sweep_distance(
    cfg: ExperimentConfig,
    factors=None,
    models=None,
    lattice: ds.DatasetFile | None = None,
    evalset: ds.DatasetFile | None = None,
) -> SweepResult:
    """Train each model on the lattice decimated by each factor; one shared eval set."""
    factors = [int(f) for f in (factors or cfg.sweep.factors)]
    models = list(models or cfg.sweep.models)
    if not factors:
        raise DataError("no decimation factors given")
    room, mics = build_room(cfg), build_mics(cfg)
    meas = measurement(cfg)
    if lattice is None:
        lattice = ds.generate_dataset(room, mics, build_grid(cfg), meas, cfg.measurement.seed, air_length(cfg))
    if evalset is None:
        evalset = eval_dataset(cfg, max(factors))
    dev = dev_dataset(cfg, meas, max(factors)) if "dnn" in models else None
    result = SweepResult()
    for kind in models:
        for factor in factors:
            t0 = time.time()
            train = ds.decimate(lattice, factor)
            reg = fit_regressor(kind, cfg, train, dev)
            spacing = cfg.grid.spacing * factor
            rep = score(reg, evalset, factor=factor, spacing=spacing, n_train=len(train))
            result.add((kind, factor), {"model": kind, "factor": factor, "spacing_m": spacing, "n_train": len(train)}, rep)
            log.info("%s factor %d (%d train): %s [%.0fs]", kind, factor, len(train), rep.summary(), time.time() - t0)
    return result


def sweep_snr(
    cfg: ExperimentConfig,
    snrs=None,
    models=None,
    evalset: ds.DatasetFile | None = None,
) -> SweepResult:
    """Regenerate noise-excited training data at each SNR, refit, and score."""
    snrs = [float(s) for s in (snrs if snrs is not None else cfg.sweep.snrs)]
    if not snrs:
        raise DataError("no SNR values given")
    models = list(models or cfg.sweep.models)
    factor = int(cfg.sweep.snr_factor)
    room, mics = build_room(cfg), build_mics(cfg)
    grid = build_grid(cfg)
    length = air_length(cfg)
    airs = ds.simulate_pose_airs(room, mics, grid.positions(), length)
    dev_pos = ds.random_positions(*eval_box(cfg, factor), cfg.eval.n_dev_poses, cfg.eval.dev_seed)
    dev_airs = ds.simulate_pose_airs(room, mics, dev_pos, length) if "dnn" in models else None
    if evalset is None:
        evalset = eval_dataset(cfg, factor)
    result = SweepResult()
    for snr in snrs:
        meas = measurement(cfg, snr_db=snr, mode="noise_excited")
        lattice = ds.generate_dataset(room, mics, grid, meas, cfg.measurement.seed, length, airs=airs)
        train = ds.decimate(lattice, factor)
        dev = None
        if dev_airs is not None:
            dev = ds.generate_dataset(room, mics, dev_pos, meas, cfg.eval.dev_seed, length, airs=dev_airs)
        for kind in models:
            t0 = time.time()
            reg = fit_regressor(kind, cfg, train, dev)
            rep = score(reg, evalset, snr_db=snr, factor=factor, n_train=len(train))
            result.add((kind, snr), {"model": kind, "snr_db": snr, "factor": factor, "n_train": len(train)}, rep)
            log.info("%s snr %g: %s [%.0fs]", kind, snr, rep.summary(), time.time() - t0)
    return result


def repeat_measure(cfg: ExperimentConfig, repeats: int | None = None, duration: float | None = None) -> EvalReport:
    repeats = int(repeats if repeats is not None else cfg.sweep.repeats)
    duration = float(duration if duration is not None else cfg.measurement.duration)
    return measurement_error_experiment(
        build_room(cfg),
        build_mics(cfg),
        cfg.sweep.repeat_position,
        repeats,
        duration,
        cfg.measurement.seed,
        air_length(cfg),
        snr_db=cfg.measurement.snr_db,
    )


def cfg_aliasing(cfg: ExperimentConfig) -> float:
    return aliasing_frequency(build_mics(cfg).spacing, cfg.room.speed_of_sound)
