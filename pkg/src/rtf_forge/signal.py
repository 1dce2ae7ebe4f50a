"""Time/frequency primitives on a fixed 1024-point transform grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, get_window

from .errors import DegenerateError, RateError, SizeError

FFT_SIZE = 1024
N_BINS = FFT_SIZE // 2 + 1
HOP = 512

# Below this many output samples direct summation is cheaper than the FFT path.
_DIRECT_CONV_LIMIT = 4096


@dataclass(frozen=True)
class TimeSeries:
    samples: np.ndarray = field(repr=False)
    sample_rate: float = 16000.0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1:
            raise SizeError("time series must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise SizeError("time series contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class Spectrum:
    """One-sided spectrum of a real 1024-sample frame (513 bins)."""

    bins: np.ndarray = field(repr=False)
    sample_rate: float = 16000.0

    @property
    def frequencies(self) -> np.ndarray:
        return bin_frequencies(self.sample_rate, self.bins.size)


@dataclass(frozen=True)
class StftFrames:
    """Framewise spectra stacked as a ``(n_frames, 513)`` complex array."""

    frames: np.ndarray = field(repr=False)
    window: str = "hann"
    win_length: int = FFT_SIZE
    hop: int = HOP
    sample_rate: float = 16000.0

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, index: int) -> Spectrum:
        return Spectrum(self.frames[index], self.sample_rate)


def bin_frequencies(sample_rate: float, n_bins: int = N_BINS) -> np.ndarray:
    """Centre frequency in Hz of each bin of a ``2 * (n_bins - 1)``-point transform."""
    return np.arange(n_bins) * sample_rate / (2 * (n_bins - 1))


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if hasattr(x, "samples") else x, dtype=float)


def fft(x, sample_rate: float = 16000.0) -> Spectrum:
    """One-sided DFT of exactly 1024 real samples."""
    arr = _samples(x)
    if arr.shape != (FFT_SIZE,):
        raise SizeError(f"fft expects {FFT_SIZE} samples, got shape {arr.shape}")
    rate = getattr(x, "sample_rate", sample_rate)
    return Spectrum(np.fft.rfft(arr), rate)


def ifft(spec: Spectrum) -> TimeSeries:
    bins = np.asarray(spec.bins)
    if bins.shape != (N_BINS,):
        raise SizeError(f"ifft expects {N_BINS} bins, got shape {bins.shape}")
    return TimeSeries(np.fft.irfft(bins, n=FFT_SIZE), spec.sample_rate)


def stft(x, win: int = FFT_SIZE, hop: int = HOP, sample_rate: float = 16000.0) -> StftFrames:
    """Hann-windowed short-time spectra; frames start at multiples of ``hop``."""
    arr = _samples(x)
    rate = getattr(x, "sample_rate", sample_rate)
    if win != FFT_SIZE:
        raise SizeError(f"window length must be {FFT_SIZE}, got {win}")
    if hop < 1:
        raise SizeError("hop must be at least one sample")
    if arr.size < win:
        raise SizeError(f"signal of {arr.size} samples is shorter than one {win}-sample window")
    n_frames = (arr.size - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(arr, win)[::hop][:n_frames]
    window = get_window("hann", win)
    return StftFrames(np.fft.rfft(frames * window, axis=1), "hann", win, hop, rate)


def convolve(x, h) -> TimeSeries:
    """Full linear convolution, length ``len(x) + len(h) - 1``."""
    rate_x = getattr(x, "sample_rate", None)
    rate_h = getattr(h, "sample_rate", None)
    if rate_x is not None and rate_h is not None and rate_x != rate_h:
        raise RateError(f"sample rates differ: {rate_x} vs {rate_h}")
    a, b = _samples(x), _samples(h)
    if a.size + b.size - 1 <= _DIRECT_CONV_LIMIT or min(a.size, b.size) <= 8:
        y = np.convolve(a, b)
    else:
        y = fftconvolve(a, b)
    return TimeSeries(y, rate_x or rate_h or 16000.0)


def white_noise(seed: int | np.random.SeedSequence, n: int, sample_rate: float = 16000.0) -> TimeSeries:
    """Zero-mean unit-variance Gaussian noise; identical seeds give identical output."""
    if n <= 0:
        raise SizeError("noise length must be positive")
    rng = np.random.default_rng(seed)
    return TimeSeries(rng.standard_normal(n), sample_rate)


def mean_power(x) -> float:
    arr = _samples(x)
    return float(np.mean(arr * arr))


def add_noise_at_snr(x, noise, snr_db: float) -> TimeSeries:
    """Return ``x + gain * noise`` with the gain set so the mix has SNR ``snr_db``."""
    a, v = _samples(x), _samples(noise)
    if a.shape != v.shape:
        raise SizeError(f"signal and noise lengths differ: {a.size} vs {v.size}")
    rate_x = getattr(x, "sample_rate", None)
    rate_v = getattr(noise, "sample_rate", None)
    if rate_x is not None and rate_v is not None and rate_x != rate_v:
        raise RateError(f"sample rates differ: {rate_x} vs {rate_v}")
    p_x, p_v = mean_power(a), mean_power(v)
    if p_x == 0.0 or p_v == 0.0:
        raise DegenerateError("signal and noise must both have nonzero power")
    gain = np.sqrt(p_x / (p_v * 10.0 ** (snr_db / 10.0)))
    return TimeSeries(a + gain * v, rate_x or rate_v or 16000.0)
