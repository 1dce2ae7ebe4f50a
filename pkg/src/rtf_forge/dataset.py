"""Pose grids, dataset generation through the simulator, splits, decimation, RTFD files."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .container import atomic_write_text, read_file, write_file
from .errors import ContractError, DataError, FormatError, GeometryError, RtfForgeError
from .regressors import Geometry, GridInfo
from .room_sim import MicArray, RoomSpec, simulate_airs
from .rtf import check_unit_ipd, free_field_rtf_batch, renormalize_ipd, rtf_from_airs, rtf_from_signals, rtf_to_features
from .signal import FFT_SIZE, N_BINS, add_noise_at_snr, convolve, stft, white_noise

DATASET_MAGIC = b"RTFD"
WALL_CLEARANCE = 0.1
POSE_LAYOUT = ["x", "y", "z"]


@dataclass(frozen=True)
class SamplingGrid:
    origin: tuple[float, float, float]
    extent: tuple[float, float, float]
    spacing: float

    @property
    def counts(self) -> tuple[int, int, int]:
        # Small slack so that e.g. 0.5 / 0.05 counts 11 nodes despite rounding.
        return tuple(int(math.floor(e / self.spacing + 1e-9)) + 1 for e in self.extent)

    def __len__(self) -> int:
        return int(np.prod(self.counts))

    def positions(self) -> np.ndarray:
        """Lattice points with the z index varying fastest."""
        axes = [np.arange(n) for n in self.counts]
        ijk = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        return np.asarray(self.origin) + ijk * self.spacing

    def info(self) -> GridInfo:
        return GridInfo(tuple(self.origin), self.spacing, self.counts)


def build_grid(origin, extent, spacing: float, room: RoomSpec | None = None) -> SamplingGrid:
    origin = tuple(float(v) for v in origin)
    extent = tuple(float(v) for v in extent)
    if not spacing > 0:
        raise GeometryError(f"grid spacing must be positive, got {spacing}")
    if min(extent) < 0:
        raise GeometryError("grid extent must be non-negative")
    grid = SamplingGrid(origin, extent, float(spacing))
    if room is not None:
        lo = np.asarray(origin)
        hi = lo + (np.asarray(grid.counts) - 1) * spacing
        dims = np.asarray(room.dims)
        if np.any(lo < WALL_CLEARANCE) or np.any(hi > dims - WALL_CLEARANCE):
            raise GeometryError(
                f"grid spanning {lo.tolist()}..{hi.tolist()} violates the {WALL_CLEARANCE} m wall clearance"
            )
    return grid


def random_positions(origin, extent, n: int, seed: int) -> np.ndarray:
    """Seeded uniform positions inside the box ``origin .. origin + extent``."""
    rng = np.random.default_rng(seed)
    return np.asarray(origin, float) + rng.random((n, 3)) * np.asarray(extent, float)


@dataclass(frozen=True)
class Measurement:
    """How targets are obtained: exact AIR ratio or noise-excited estimation."""

    mode: str = "analytic"
    duration: float = 1.0
    snr_db: float | None = None
    normalize_direct: bool = False
    layout: str = "ild_sincos"

    def __post_init__(self):
        if self.mode not in ("analytic", "noise_excited"):
            raise ContractError(f"unknown measurement mode {self.mode!r}")
        if self.duration <= 0:
            raise ContractError("excitation duration must be positive")


@dataclass
class DatasetFile:
    header: dict
    poses: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def grid(self) -> GridInfo | None:
        g = self.header.get("grid")
        return GridInfo.from_dict(g) if g else None

    @property
    def geometry(self) -> Geometry:
        room = self.header["room"]
        return Geometry(
            tuple(tuple(p) for p in self.header["mics"]),
            room["speed_of_sound"],
            room["sample_rate"],
            self.header["n_bins"],
        )

    def subset(self, rows, **updates) -> DatasetFile:
        rows = np.asarray(rows, dtype=np.int64)
        header = {**self.header, **updates, "n_rows": int(rows.size)}
        return DatasetFile(header, self.poses[rows], self.targets[rows])


def room_header(room: RoomSpec) -> dict:
    return asdict(room) | {"dims": list(room.dims)}


def room_from_header(d: dict) -> RoomSpec:
    return RoomSpec(tuple(d["dims"]), d["rt60"], d["reflection"], d["speed_of_sound"], d["sample_rate"])


def pose_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def measure_rtf(h1, h2, measurement: Measurement, seed_seq: np.random.SeedSequence, sample_rate: float) -> np.ndarray:
    """One RTF measurement from a pair of impulse responses."""
    if measurement.mode == "analytic":
        return rtf_from_airs(h1, h2).h
    src_seed, n1_seed, n2_seed = seed_seq.spawn(3)
    n = int(round(measurement.duration * sample_rate))
    s = white_noise(src_seed, n, sample_rate)
    a1 = convolve(s, h1)
    a2 = convolve(s, h2)
    if measurement.snr_db is not None:
        a1 = add_noise_at_snr(a1, white_noise(n1_seed, len(a1), sample_rate), measurement.snr_db)
        a2 = add_noise_at_snr(a2, white_noise(n2_seed, len(a2), sample_rate), measurement.snr_db)
    return rtf_from_signals(stft(a1), stft(a2)).h


def _feature_rows(h: np.ndarray, positions: np.ndarray, measurement: Measurement, geometry: Geometry):
    if measurement.normalize_direct:
        h = h / geometry.direct_rtf(positions)
    feats, n_low = rtf_to_features(h, measurement.layout)
    if measurement.layout == "ild_sincos":
        feats, _ = renormalize_ipd(feats)
    return feats, n_low


def simulate_pose_airs(room: RoomSpec, mics: MicArray, positions, air_length: int) -> np.ndarray:
    """``(n, 2, air_length)`` impulse responses, one pair per source position."""
    positions = np.atleast_2d(positions)
    out = np.empty((len(positions), 2, air_length))
    for i, p in enumerate(positions):
        try:
            h1, h2 = simulate_airs(room, p, mics, air_length)
        except RtfForgeError as exc:
            raise type(exc)(f"pose {i}: {exc}") from exc
        out[i, 0], out[i, 1] = h1.samples, h2.samples
    return out


def _chunk_features(args):
    room, mics, positions, indices, measurement, seed, air_length, airs = args
    geometry = _geometry(room, mics)
    rows = np.empty((len(positions), N_BINS), dtype=complex)
    for n, (p, index) in enumerate(zip(positions, indices)):
        try:
            if airs is None:
                h1, h2 = simulate_airs(room, p, mics, air_length)
                h1, h2 = h1.samples, h2.samples
            else:
                h1, h2 = airs[n]
            rows[n] = measure_rtf(h1, h2, measurement, pose_seed(seed, index), room.sample_rate)
        except RtfForgeError as exc:
            raise type(exc)(f"pose {index}: {exc}") from exc
    return _feature_rows(rows, positions, measurement, geometry)


def _geometry(room: RoomSpec, mics: MicArray) -> Geometry:
    return Geometry(tuple(p.position for p in mics.mic_poses), room.speed_of_sound, room.sample_rate)


def worker_count() -> int:
    env = os.environ.get("RTF_FORGE_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        return max(1, min(int(env), cpus))
    return cpus


def default_air_length(room: RoomSpec) -> int:
    """Responses cover the requested decay time, at least one transform frame."""
    return max(FFT_SIZE, int(math.ceil(room.rt60 * room.sample_rate)))


def generate_dataset(
    room: RoomSpec,
    mics: MicArray,
    grid,
    measurement: Measurement | None = None,
    seed: int = 0,
    air_length: int | None = None,
    airs: np.ndarray | None = None,
    workers: int | None = None,
) -> DatasetFile:
    """Simulate every pose of ``grid`` (a SamplingGrid or an ``(n, 3)`` array).

    Per-pose randomness comes from ``SeedSequence([seed, pose_index])`` so the
    output does not depend on the worker count. ``airs`` may supply
    precomputed impulse-response pairs from :func:`simulate_pose_airs`.
    """
    measurement = measurement or Measurement()
    air_length = air_length or default_air_length(room)
    positions = grid.positions() if isinstance(grid, SamplingGrid) else np.atleast_2d(np.asarray(grid, float))
    n = len(positions)
    if n == 0:
        raise DataError("no poses to simulate")
    workers = workers or worker_count()
    indices = np.arange(n)
    chunks = np.array_split(indices, max(1, min(workers * 4, n))) if workers > 1 else [indices]
    jobs = [
        (room, mics, positions[c], c, measurement, seed, air_length, None if airs is None else airs[c])
        for c in chunks
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_chunk_features, jobs))
    else:
        results = [_chunk_features(j) for j in jobs]
    feats = np.concatenate([r[0] for r in results])
    header = {
        "sample_rate": room.sample_rate,
        "fft_size": FFT_SIZE,
        "n_bins": N_BINS,
        "layout": measurement.layout,
        "pose_layout": POSE_LAYOUT,
        "room": room_header(room),
        "mics": [list(p.position) for p in mics.mic_poses],
        "measurement": asdict(measurement),
        "seed": int(seed),
        "air_length": int(air_length),
        "n_rows": n,
        "n_floored": int(sum(r[1] for r in results)),
    }
    if isinstance(grid, SamplingGrid):
        header["grid"] = grid.info().to_dict() | {"extent": list(grid.extent)}
    return DatasetFile(header, positions.astype(np.float32), feats.astype(np.float32))


def split(dataset: DatasetFile, rule: str = "alternating", seed: int = 0):
    """Return (train, dev, test).

    ``alternating``: even rows train; the odd rows alternate dev, test.
    ``random``: seeded shuffle, then 50/25/25.
    """
    n = len(dataset)
    if n < 4:
        raise DataError(f"need at least 4 rows to split, got {n}")
    idx = np.arange(n)
    if rule == "alternating":
        train, rest = idx[0::2], idx[1::2]
        dev, test = rest[0::2], rest[1::2]
    elif rule == "random":
        perm = np.random.default_rng(seed).permutation(n)
        n_train = n // 2
        n_dev = (n - n_train) // 2
        train, dev, test = perm[:n_train], perm[n_train : n_train + n_dev], perm[n_train + n_dev :]
        train, dev, test = np.sort(train), np.sort(dev), np.sort(test)
    else:
        raise DataError(f"unknown split rule {rule!r}")
    return tuple(
        dataset.subset(rows, split=name, split_rule=rule) for name, rows in zip(("train", "dev", "test"), (train, dev, test))
    )


def decimate(dataset: DatasetFile, factor: int) -> DatasetFile:
    """Keep lattice nodes whose indices are all multiples of ``factor``."""
    grid = dataset.grid
    if grid is None:
        raise ContractError("decimation needs grid metadata in the dataset header")
    if factor < 1:
        raise ContractError("decimation factor must be at least 1")
    idx = grid.indices(dataset.poses)
    rows = np.nonzero(np.all(idx % factor == 0, axis=1))[0]
    new_grid = GridInfo(grid.origin, grid.spacing * factor, tuple((c - 1) // factor + 1 for c in grid.counts))
    g = dataset.header["grid"] | new_grid.to_dict()
    return dataset.subset(rows, grid=g)


def save(dataset: DatasetFile, path) -> None:
    header = {**dataset.header, "n_rows": len(dataset)}
    tensors = {"poses": dataset.poses, "targets": dataset.targets}
    write_file(path, DATASET_MAGIC, header, tensors, "<f4")


def load(path) -> DatasetFile:
    header, tensors = read_file(path, DATASET_MAGIC)
    try:
        poses, targets = tensors["poses"], tensors["targets"]
    except KeyError as exc:
        raise FormatError(f"dataset lacks tensor {exc}") from None
    if len(poses) != header.get("n_rows") or len(targets) != len(poses):
        raise FormatError(f"row counts disagree with header n_rows={header.get('n_rows')}")
    if targets.shape[1] != 3 * header["n_bins"] and header.get("layout") == "ild_sincos":
        raise FormatError(f"target width {targets.shape[1]} does not match {header['n_bins']} bins")
    if header.get("layout") == "ild_sincos":
        try:
            check_unit_ipd(targets)
        except ContractError as exc:
            raise FormatError(str(exc)) from None
    return DatasetFile(header, poses, targets)


def write_manifest(path, datasets: dict[str, DatasetFile], extra: dict | None = None) -> dict:
    """Human-readable JSON summary of the headers of ``datasets``."""
    first = next(iter(datasets.values()))
    manifest = {
        "header": {k: v for k, v in first.header.items() if k not in ("n_rows", "split")},
        "files": {name: {"rows": len(ds), "split": ds.header.get("split")} for name, ds in datasets.items()},
        **(extra or {}),
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
