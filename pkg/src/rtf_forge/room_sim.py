"""Shoebox room impulse responses via the image-source method.

Every image source within ``c * length / fs`` metres of the microphone is
rendered with a 64-tap Hann-windowed sinc fractional-delay kernel, so the
phase of each arrival is accurate to well below a sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.signal import butter, sosfiltfilt

from .errors import GeometryError, SizeError

SPEED_OF_SOUND = 343.0
SAMPLE_RATE = 16000.0
KERNEL_HALF_WIDTH = 32
SABINE_CONSTANT = 0.161



def _check_dims(dims) -> np.ndarray:
    dims = np.asarray(dims, dtype=float)
    if dims.shape != (3,) or not np.all(np.isfinite(dims)) or np.any(dims <= 0):
        raise GeometryError(f"room dimensions must be three positive lengths, got {dims.tolist()}")
    return dims


def reflection_from_rt60(room_dims, rt60: float) -> float:
    """Uniform wall reflection coefficient for a target reverberation time.

    Inverts Sabine's formula ``rt60 = 0.161 V / (S alpha)`` and returns
    ``beta = sqrt(1 - alpha)``. Reverberation times short enough to need
    ``alpha >= 1`` give an anechoic room (``beta = 0``).
    """
    dims = _check_dims(room_dims)
    if rt60 < 0 or not math.isfinite(rt60):
        raise GeometryError(f"rt60 must be a non-negative number, got {rt60}")
    if rt60 == 0:
        return 0.0
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + ly * lz + lx * lz)
    alpha = SABINE_CONSTANT * volume / (surface * rt60)
    return math.sqrt(max(0.0, 1.0 - alpha))


def rt60_from_reflection(room_dims, reflection: float) -> float:
    """Sabine reverberation time implied by a uniform reflection coefficient."""
    dims = _check_dims(room_dims)
    alpha = 1.0 - reflection**2
    lx, ly, lz = dims
    return SABINE_CONSTANT * lx * ly * lz / (2.0 * (lx * ly + ly * lz + lx * lz) * alpha)


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with the same reflection coefficient on all six walls.

    Build it with :meth:`from_rt60` so that ``rt60`` and ``reflection`` agree.
    """

    dims: tuple[float, float, float]
    rt60: float
    reflection: float
    speed_of_sound: float = SPEED_OF_SOUND
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        dims = _check_dims(self.dims)
        object.__setattr__(self, "dims", tuple(float(d) for d in dims))
        if not 0.0 <= self.reflection < 1.0:
            raise GeometryError(f"reflection must lie in [0, 1), got {self.reflection}")
        if self.rt60 < 0:
            raise GeometryError(f"rt60 must be non-negative, got {self.rt60}")
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise GeometryError("sample_rate and speed_of_sound must be positive")

    @classmethod
    def from_rt60(
        cls,
        dims,
        rt60: float,
        speed_of_sound: float = SPEED_OF_SOUND,
        sample_rate: float = SAMPLE_RATE,
    ) -> RoomSpec:
        return cls(
            dims=tuple(dims),
            rt60=float(rt60),
            reflection=reflection_from_rt60(dims, rt60),
            speed_of_sound=speed_of_sound,
            sample_rate=sample_rate,
        )

    def contains(self, position, margin: float = 0.0) -> bool:
        p = np.asarray(position, dtype=float)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dims) - margin))


@dataclass(frozen=True)
class Pose:
    """Position in metres plus an orientation block in radians.

    The orientation is carried for completeness; omnidirectional simulation
    ignores it.
    """

    position: tuple[float, float, float]
    azimuth: float = 0.0
    elevation: float = 0.0
    rotation: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise GeometryError(f"position must have three coordinates, got {pos}")
        object.__setattr__(self, "position", pos)

    @property
    def xyz(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class MicArray:
    """Two microphones; the first one is the RTF reference channel."""

    mic_poses: tuple[Pose, Pose]

    def __post_init__(self):
        poses = tuple(p if isinstance(p, Pose) else Pose(p) for p in self.mic_poses)
        if len(poses) != 2:
            raise GeometryError("a microphone array holds exactly two poses")
        if self._distance(poses) <= 0:
            raise GeometryError("microphone positions must be distinct")
        object.__setattr__(self, "mic_poses", poses)

    @staticmethod
    def _distance(poses) -> float:
        return float(np.linalg.norm(poses[1].xyz - poses[0].xyz))

    @property
    def spacing(self) -> float:
        return self._distance(self.mic_poses)

    @classmethod
    def pair(cls, center, spacing: float = 0.18, axis: int = 0) -> MicArray:
        """Two microphones ``spacing`` apart, centred on ``center`` along ``axis``."""
        center = np.asarray(center, dtype=float)
        offset = np.zeros(3)
        offset[axis] = spacing / 2.0
        return cls((Pose(tuple(center - offset)), Pose(tuple(center + offset))))


@dataclass(frozen=True)
class AirSignal:
    samples: np.ndarray = field(repr=False)
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise SizeError("an impulse response needs at least one sample")


def _as_xyz(p) -> np.ndarray:
    return p.xyz if isinstance(p, Pose) else np.asarray(p, dtype=float)


def direct_delay(source, mic, c: float = SPEED_OF_SOUND) -> float:
    """Propagation time in seconds along the straight source-microphone path."""
    d = float(np.linalg.norm(_as_xyz(mic) - _as_xyz(source)))
    if d == 0.0:
        raise GeometryError("source and microphone coincide")
    return d / c


def _axis_images(src: float, length: float, radius: float, mic: float):
    """Image coordinates and wall-hit counts along one axis."""
    n_max = int(math.ceil(radius / (2.0 * length))) + 1
    n = np.arange(-n_max, n_max + 1)
    coords = np.concatenate([src + 2.0 * n * length, -src + 2.0 * n * length])
    hits = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
    keep = np.abs(coords - mic) <= radius
    return coords[keep], hits[keep]


def _image_arrivals(room: RoomSpec, src: np.ndarray, mic: np.ndarray, radius: float):
    """Distances and reflection counts of all images within ``radius`` of ``mic``."""
    if room.reflection == 0.0:
        return np.array([np.linalg.norm(mic - src)]), np.zeros(1, dtype=int)
    axes = [_axis_images(src[a], room.dims[a], radius, mic[a]) for a in range(3)]
    (cx, hx), (cy, hy), (cz, hz) = axes
    d2 = (
        ((cx - mic[0]) ** 2)[:, None, None]
        + ((cy - mic[1]) ** 2)[None, :, None]
        + ((cz - mic[2]) ** 2)[None, None, :]
    )
    hits = hx[:, None, None] + hy[None, :, None] + hz[None, None, :]
    keep = d2 <= radius * radius
    return np.sqrt(d2[keep]), hits[keep]


@njit(cache=True)
def _render(delays, amplitudes, length, half):
    out = np.zeros(length)
    step = np.pi / half
    for i in range(delays.shape[0]):
        tau = delays[i]
        base = int(np.floor(tau))
        frac = tau - base
        # sin(pi (m - frac)) alternates sign with m; the Hann term is advanced
        # by an angle-addition recurrence so each tap costs one division.
        # 1 - frac is exact for frac > 0.5; this keeps sinc accurate when tau is
        # a hair below an integer.
        s = np.sin(np.pi * (1.0 - frac)) if frac > 0.5 else np.sin(np.pi * frac)
        cw = np.cos(frac * step)
        sw = -np.sin(frac * step)
        c0 = np.cos((1 - half) * step)
        s0 = np.sin((1 - half) * step)
        wc = c0 * cw - s0 * sw
        ws = s0 * cw + c0 * sw
        cstep = np.cos(step)
        sstep = np.sin(step)
        sign = 1.0 if (1 - half) % 2 == 0 else -1.0
        amp = amplitudes[i]
        for m in range(1 - half, half + 1):
            n = base + m
            if 0 <= n < length:
                t = m - frac
                if t == 0.0:
                    sinc = 1.0
                else:
                    sinc = -sign * s / (np.pi * t)
                out[n] += amp * sinc * 0.5 * (1.0 + wc)
            wc, ws = wc * cstep - ws * sstep, ws * cstep + wc * sstep
            sign = -sign
    return out


def render_arrivals(delays: np.ndarray, amplitudes: np.ndarray, length: int) -> np.ndarray:
    """Sum windowed-sinc fractional-delay pulses into a length-``length`` buffer.

    ``delays`` are in samples. The kernel of a pulse at ``tau`` spans taps
    ``floor(tau) - 31 .. floor(tau) + 32``; an integer delay gives a unit
    impulse. Taps outside ``[0, length)`` are dropped.
    """
    delays = np.ascontiguousarray(delays, dtype=np.float64)
    amplitudes = np.ascontiguousarray(amplitudes, dtype=np.float64)
    return _render(delays, amplitudes, int(length), KERNEL_HALF_WIDTH)


def simulate_airs(room: RoomSpec, source, mics, length: int) -> list[AirSignal]:
    """Impulse responses from ``source`` to each microphone in ``mics``.

    ``mics`` is a :class:`MicArray` or any sequence of poses/positions.
    """
    if isinstance(mics, MicArray):
        mics = mics.mic_poses
    src = _as_xyz(source)
    if not room.contains(src):
        raise GeometryError(f"source {src.tolist()} is not strictly inside the room")
    length = int(length)
    fs, c = room.sample_rate, room.speed_of_sound
    radius = c * length / fs
    out = []
    for mic in mics:
        m = _as_xyz(mic)
        if not room.contains(m):
            raise GeometryError(f"microphone {m.tolist()} is not strictly inside the room")
        delay = direct_delay(src, m, c) * fs
        if delay >= length:
            raise SizeError(
                f"length {length} does not cover the direct-path delay of {delay:.2f} samples"
            )
        dist, hits = _image_arrivals(room, src, m, radius)
        amp = room.reflection ** hits / (4.0 * np.pi * dist)
        out.append(AirSignal(render_arrivals(dist / c * fs, amp, length), fs))
    return out


def simulate_air(room: RoomSpec, source, mic, length: int) -> AirSignal:
    """Impulse response between one source and one microphone."""
    return simulate_airs(room, source, [mic], length)[0]


def schroeder_decay_time(
    samples: np.ndarray,
    sample_rate: float,
    fit_range: tuple[float, float] = (-5.0, -35.0),
    highpass_hz: float | None = None,
) -> float:
    """Reverberation time from the backward-integrated energy decay curve.

    A line is fitted to the decay curve between the two levels in
    ``fit_range`` (dB) and extrapolated to -60 dB. With ``highpass_hz`` the
    response is first passed through a zero-phase 4th-order Butterworth
    high-pass; image-source responses carry a coherent near-DC component
    (every image pulse is positive) that otherwise stretches the tail.
    """
    h = np.asarray(samples, dtype=float)
    if highpass_hz is not None:
        sos = butter(4, highpass_hz, "highpass", fs=sample_rate, output="sos")
        h = sosfiltfilt(sos, h)
    return _decay_time(np.cumsum((h**2)[::-1])[::-1], sample_rate, fit_range)


def image_energy_decay_time(
    room: RoomSpec,
    source,
    mic,
    duration: float,
    fit_range: tuple[float, float] = (-5.0, -35.0),
) -> float:
    """Decay time from image energies binned per sample, without rendering."""
    src, m = _as_xyz(source), _as_xyz(mic)
    fs, c = room.sample_rate, room.speed_of_sound
    dist, hits = _image_arrivals(room, src, m, c * duration)
    energy = (room.reflection ** (2 * hits)) / (4.0 * np.pi * dist) ** 2
    n = int(duration * fs)
    binned = np.bincount(np.minimum((dist / c * fs).astype(np.int64), n - 1), energy, minlength=n)
    return _decay_time(np.cumsum(binned[::-1])[::-1], fs, fit_range)


def _decay_time(edc: np.ndarray, sample_rate: float, fit_range) -> float:
    if edc[0] <= 0:
        raise GeometryError("cannot measure decay of an all-zero response")
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(edc / edc[0])
    hi, lo = fit_range
    sel = np.nonzero((edc_db <= hi) & (edc_db >= lo))[0]
    if sel.size < 2:
        raise SizeError("response too short to span the decay fit range")
    slope, _ = np.polyfit(sel / sample_rate, edc_db[sel], 1)
    return -60.0 / slope
