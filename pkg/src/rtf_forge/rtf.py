"""Relative transfer functions, their ILD/IPD features, and the free-field model.

Feature vectors use the layout ``[ild | sin(ipd) | cos(ipd)]`` with 513 bins
per block. Array helpers accept any leading batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateError, GeometryError, SizeError
from .room_sim import SPEED_OF_SOUND, MicArray, _as_xyz
from .signal import N_BINS, StftFrames, bin_frequencies

MAG_FLOOR = 1e-12
UNIT_TOL = 1e-6

LAYOUTS = ("ild_sincos", "real_imag")


@dataclass(frozen=True)
class RtfVector:
    h: np.ndarray = field(repr=False)
    n_floored: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.h)):
            raise ContractError("RTF contains non-finite bins")


@dataclass(frozen=True)
class FeatureVector:
    ild: np.ndarray = field(repr=False)
    ipd_sin: np.ndarray = field(repr=False)
    ipd_cos: np.ndarray = field(repr=False)
    n_flagged: int = 0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.ild, self.ipd_sin, self.ipd_cos])

    @classmethod
    def from_array(cls, arr, n_flagged: int = 0) -> FeatureVector:
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 1 or arr.size % 3:
            raise SizeError(f"feature array must be 1-D with length divisible by 3, got {arr.shape}")
        n = arr.size // 3
        return cls(arr[:n], arr[n : 2 * n], arr[2 * n :], n_flagged)


def blocks(arr: np.ndarray):
    """Split ``(..., 3n)`` features into ILD, sine and cosine views."""
    n = arr.shape[-1] // 3
    return arr[..., :n], arr[..., n : 2 * n], arr[..., 2 * n :]


def wrap_phase(phi):
    """Wrap angles into (-pi, pi]."""
    wrapped = np.mod(np.asarray(phi, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


# -- spectra -----------------------------------------------------------------


def air_spectrum(samples: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Spectrum of an impulse response sampled at the 1024-point bin frequencies.

    Responses longer than 1024 samples are transformed at the next power of
    two and every ``nfft / 1024``-th bin is kept, which avoids wrapping the
    reverberant tail.
    """
    h = np.asarray(samples, dtype=float)
    base = 2 * (n_bins - 1)
    nfft = base
    while nfft < h.shape[-1]:
        nfft *= 2
    spec = np.fft.rfft(h, n=nfft, axis=-1)
    return spec[..., :: nfft // base][..., :n_bins]


def _floor_reference(ref: np.ndarray) -> tuple[np.ndarray, int]:
    mag = np.abs(ref)
    peak = mag.max()
    if peak == 0.0:
        raise DegenerateError("reference channel is identically zero")
    low = mag < MAG_FLOOR * peak
    if not low.any():
        return ref, 0
    floored = ref.copy()
    phase = np.where(mag[low] > 0, ref[low] / np.where(mag[low] > 0, mag[low], 1.0), 1.0)
    floored[low] = MAG_FLOOR * peak * phase
    return floored, int(low.sum())


def rtf_from_airs(h1, h2) -> RtfVector:
    """Per-bin ratio ``H2 / H1`` of the two impulse-response spectra."""
    a = np.asarray(getattr(h1, "samples", h1), dtype=float)
    b = np.asarray(getattr(h2, "samples", h2), dtype=float)
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    if not np.any(a):
        raise DegenerateError("reference impulse response is identically zero")
    ref, n_floored = _floor_reference(air_spectrum(a))
    return RtfVector(air_spectrum(b) / ref, n_floored)


def rtf_from_signals(a1: StftFrames, a2: StftFrames, min_frames: int = 4) -> RtfVector:
    """Cross-spectral estimate ``sum A2 conj(A1) / sum |A1|^2`` over frames."""
    f1 = np.asarray(a1.frames if isinstance(a1, StftFrames) else a1)
    f2 = np.asarray(a2.frames if isinstance(a2, StftFrames) else a2)
    if f1.shape != f2.shape:
        raise SizeError(f"frame shapes differ: {f1.shape} vs {f2.shape}")
    if f1.ndim != 2 or f1.shape[0] < min_frames:
        raise SizeError(f"need at least {min_frames} frames, got {f1.shape[0] if f1.ndim == 2 else 0}")
    cross = np.einsum("lf,lf->f", f2, f1.conj())
    auto = np.einsum("lf,lf->f", f1, f1.conj()).real
    mag = np.sqrt(auto)
    peak = mag.max()
    if peak == 0.0:
        raise DegenerateError("reference channel has zero power in every bin")
    low = mag < MAG_FLOOR * peak
    auto = np.where(low, (MAG_FLOOR * peak) ** 2, auto)
    return RtfVector(cross / auto, int(low.sum()))


# -- free field ----------------------------------------------------------------


def _mic_xyz(mics) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(mics, MicArray):
        mics = mics.mic_poses
    return _as_xyz(mics[0]), _as_xyz(mics[1])


def free_field_rtf_batch(
    positions,
    mics,
    c: float = SPEED_OF_SOUND,
    sample_rate: float = 16000.0,
    n_bins: int = N_BINS,
) -> np.ndarray:
    """Direct-path RTFs for an ``(n, 3)`` array of source positions."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    m1, m2 = _mic_xyz(mics)
    d1 = np.linalg.norm(pos - m1, axis=1)
    d2 = np.linalg.norm(pos - m2, axis=1)
    if np.any(d1 == 0.0) or np.any(d2 == 0.0):
        raise GeometryError("source coincides with a microphone")
    f = bin_frequencies(sample_rate, n_bins)
    # Same sign as the analysis DFT: a longer path means a phase lag.
    phase = -2.0 * np.pi * f[None, :] * ((d2 - d1) / c)[:, None]
    return (d1 / d2)[:, None] * np.exp(1j * phase)


def free_field_rtf(
    source,
    mics,
    c: float = SPEED_OF_SOUND,
    sample_rate: float = 16000.0,
    n_bins: int = N_BINS,
) -> RtfVector:
    """Ratio of the two direct-path Green's functions at the bin frequencies.

    Magnitude is ``d1 / d2``; the phase lag is ``2 pi f (d2 - d1) / c``.
    """
    return RtfVector(free_field_rtf_batch(_as_xyz(source), mics, c, sample_rate, n_bins)[0])


def normalize_by_direct(h: RtfVector, h_d: RtfVector) -> RtfVector:
    d = np.asarray(h_d.h)
    if np.any(d == 0):
        raise DegenerateError("direct-path RTF has a zero bin")
    return RtfVector(np.asarray(h.h) / d, h.n_floored)


def denormalize_by_direct(h: RtfVector, h_d: RtfVector) -> RtfVector:
    return RtfVector(np.asarray(h.h) * np.asarray(h_d.h), h.n_floored)


# -- features --------------------------------------------------------------------


def rtf_to_features(h: np.ndarray, layout: str = "ild_sincos") -> tuple[np.ndarray, int]:
    """Feature rows for RTFs of shape ``(..., n_bins)``; also returns the floored-bin count."""
    h = np.asarray(h, dtype=complex)
    if layout == "real_imag":
        return np.concatenate([h.real, h.imag], axis=-1), 0
    if layout != "ild_sincos":
        raise ContractError(f"unknown feature layout {layout!r}")
    mag = np.abs(h)
    low = mag < MAG_FLOOR
    ild = 20.0 * np.log10(np.maximum(mag, MAG_FLOOR))
    phase = np.angle(h)
    return np.concatenate([ild, np.sin(phase), np.cos(phase)], axis=-1), int(low.sum())


def features_to_rtf(arr: np.ndarray, layout: str = "ild_sincos") -> np.ndarray:
    """Inverse of :func:`rtf_to_features`: ``10^(ild/20) (cos + j sin)``."""
    arr = np.asarray(arr, dtype=float)
    if layout == "real_imag":
        n = arr.shape[-1] // 2
        return arr[..., :n] + 1j * arr[..., n:]
    ild, s, c = blocks(arr)
    return 10.0 ** (ild / 20.0) * (c + 1j * s)


def features_from_rtf(h: RtfVector) -> FeatureVector:
    arr, n_low = rtf_to_features(h.h)
    return FeatureVector.from_array(arr, n_flagged=n_low)


def renormalize_ipd(arr: np.ndarray) -> tuple[np.ndarray, int]:
    """Scale each (sin, cos) pair to unit length; degenerate pairs become (0, 1)."""
    out = np.array(arr, dtype=float, copy=True)
    _, s, c = blocks(out)
    r = np.sqrt(s * s + c * c)
    bad = r < MAG_FLOOR
    r = np.where(bad, 1.0, r)
    s /= r
    c /= r
    s[bad] = 0.0
    c[bad] = 1.0
    return out, int(bad.sum())


def ipd_renormalize(v: FeatureVector) -> FeatureVector:
    arr, flagged = renormalize_ipd(v.as_array())
    return FeatureVector.from_array(arr, n_flagged=flagged)


def check_unit_ipd(arr: np.ndarray, tol: float = UNIT_TOL) -> None:
    _, s, c = blocks(np.asarray(arr, dtype=float))
    dev = np.abs(s * s + c * c - 1.0)
    if dev.size and dev.max() > tol:
        raise ContractError(f"IPD block is not unit-norm (max deviation {dev.max():.3g})")


def ipd_error_array(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Wrapped absolute phase difference per bin for feature arrays."""
    check_unit_ipd(pred)
    check_unit_ipd(target)
    _, sp, cp = blocks(np.asarray(pred, dtype=float))
    _, st, ct = blocks(np.asarray(target, dtype=float))
    return np.abs(wrap_phase(np.arctan2(sp, cp) - np.arctan2(st, ct)))


def ipd_error(pred: FeatureVector, target: FeatureVector) -> np.ndarray:
    return ipd_error_array(pred.as_array(), target.as_array())
