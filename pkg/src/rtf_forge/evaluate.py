"""Per-frequency mean absolute error with normal-approximation confidence intervals."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .container import atomic_write_text
from .dataset import Measurement, measure_rtf, pose_seed
from .errors import DataError, DegenerateError
from .room_sim import SPEED_OF_SOUND, MicArray, RoomSpec, simulate_airs
from .rtf import blocks, ipd_error_array, renormalize_ipd, rtf_from_airs, rtf_to_features
from .signal import bin_frequencies

Z_95 = 1.96


@dataclass
class EvalReport:
    ild_mae: list[float]
    ild_ci: list[float]
    ipd_mae: list[float]
    ipd_ci: list[float]
    ild_mae_mean: float
    ild_ci_mean: float
    ipd_mae_mean: float
    ipd_ci_mean: float
    n_samples: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return (
            f"ILD {self.ild_mae_mean:.3f} +/- {self.ild_ci_mean:.3f} dB, "
            f"IPD {self.ipd_mae_mean:.3f} +/- {self.ipd_ci_mean:.3f} rad (N={self.n_samples})"
        )


def _mean_and_ci(abs_err: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = abs_err.shape[0]
    return abs_err.mean(axis=0), Z_95 * abs_err.std(axis=0, ddof=1) / np.sqrt(n)


def mae_per_freq(preds, targets, metadata: dict | None = None) -> EvalReport:
    """Mean absolute ILD error (dB) and wrapped IPD error (rad) per frequency bin.

    CI half-widths are ``1.96 * s / sqrt(N)`` with the N-1 sample standard
    deviation of the per-sample absolute errors.
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if preds.shape != targets.shape:
        raise DataError(f"prediction shape {preds.shape} does not match targets {targets.shape}")
    n = preds.shape[0]
    if n < 2:
        raise DataError("at least two samples are needed for a confidence interval")
    ild_err = np.abs(blocks(preds)[0] - blocks(targets)[0])
    ipd_err = ipd_error_array(preds, targets)
    ild_mae, ild_ci = _mean_and_ci(ild_err)
    ipd_mae, ipd_ci = _mean_and_ci(ipd_err)
    return EvalReport(
        ild_mae.tolist(),
        ild_ci.tolist(),
        ipd_mae.tolist(),
        ipd_ci.tolist(),
        float(ild_mae.mean()),
        float(ild_ci.mean()),
        float(ipd_mae.mean()),
        float(ipd_ci.mean()),
        int(n),
        dict(metadata or {}),
    )


def aliasing_frequency(mic_spacing: float, c: float = SPEED_OF_SOUND) -> float:
    """Frequency above which the pair's phase difference becomes ambiguous: ``c / 2d``."""
    if not mic_spacing > 0:
        raise DegenerateError("microphone spacing must be positive")
    return c / (2.0 * mic_spacing)


def measurement_error_experiment(
    room: RoomSpec,
    mics: MicArray,
    position,
    repeats: int,
    duration: float = 1.0,
    seed: int = 0,
    air_length: int | None = None,
    mode: str = "noise_excited",
    snr_db: float | None = None,
) -> EvalReport:
    """Repeat the measurement of one pose with fresh noise and score it against the exact RTF."""
    from .dataset import default_air_length

    if repeats < 2:
        raise DataError("need at least two repeats")
    air_length = air_length or default_air_length(room)
    h1, h2 = simulate_airs(room, position, mics, air_length)
    exact, _ = rtf_to_features(rtf_from_airs(h1, h2).h)
    measurement = Measurement(mode=mode, duration=duration, snr_db=snr_db)
    rows = np.empty((repeats, exact.size))
    for r in range(repeats):
        h = measure_rtf(h1.samples, h2.samples, measurement, pose_seed(seed, r), room.sample_rate)
        rows[r] = rtf_to_features(h)[0]
    rows, _ = renormalize_ipd(rows)
    exact, _ = renormalize_ipd(exact)
    meta = {
        "experiment": "measurement_error",
        "position": [float(v) for v in np.asarray(position, float)],
        "repeats": int(repeats),
        "duration": float(duration),
        "mode": mode,
        "seed": int(seed),
    }
    return mae_per_freq(rows, np.broadcast_to(exact, rows.shape), meta)


CURVE_COLUMNS = ["freq_bin", "freq_hz", "ild_mae", "ild_ci", "ipd_mae", "ipd_ci"]


def curve_text(report: EvalReport, sample_rate: float, aliasing_hz: float) -> str:
    freqs = bin_frequencies(sample_rate, len(report.ild_mae))
    buf = io.StringIO()
    buf.write(f"# aliasing_frequency_hz={aliasing_hz:.6g}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for k, row in enumerate(zip(freqs, report.ild_mae, report.ild_ci, report.ipd_mae, report.ipd_ci)):
        w.writerow([k] + [f"{v:.6g}" for v in row])
    return buf.getvalue()


def export_curve(report: EvalReport, path, sample_rate: float, aliasing_hz: float) -> None:
    """CSV of per-bin errors; the first line is a comment carrying f_a."""
    atomic_write_text(path, curve_text(report, sample_rate, aliasing_hz))


def read_curve(path) -> tuple[float, dict[str, np.ndarray]]:
    with open(path) as fh:
        first = fh.readline()
        aliasing = float(first.split("=", 1)[1])
        rows = list(csv.DictReader(fh))
    return aliasing, {c: np.array([float(r[c]) for r in rows]) for c in CURVE_COLUMNS}


def write_report(report: EvalReport, path) -> None:
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2))
