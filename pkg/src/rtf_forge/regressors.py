"""Pose-to-feature regressors: free field, linear interpolation, piecewise affine, MLP.

All regressors take source positions as an ``(n, 3)`` array and return
``(n, 3 * n_bins)`` feature rows whose IPD block is unit-norm per bin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.cluster import KMeans

from . import nn
from .container import read_file, write_file
from .errors import DataError, ExtrapolationError, FormatError, NumericError
from .rtf import features_to_rtf, free_field_rtf_batch, renormalize_ipd, rtf_to_features
from .signal import N_BINS

CHECKPOINT_MAGIC = nn.CHECKPOINT_MAGIC


@dataclass(frozen=True)
class GridInfo:
    """Lattice metadata: node ``(i, j, k)`` sits at ``origin + (i, j, k) * spacing``."""

    origin: tuple[float, float, float]
    spacing: float
    counts: tuple[int, int, int]

    def indices(self, positions: np.ndarray) -> np.ndarray:
        return np.rint((np.asarray(positions, float) - self.origin) / self.spacing).astype(np.int64)

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "spacing": self.spacing, "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> GridInfo:
        return cls(tuple(float(v) for v in d["origin"]), float(d["spacing"]), tuple(int(v) for v in d["counts"]))


@dataclass(frozen=True)
class Geometry:
    """What the free-field model needs: microphone positions, c, sample rate."""

    mic_positions: tuple[tuple[float, float, float], tuple[float, float, float]]
    speed_of_sound: float = 343.0
    sample_rate: float = 16000.0
    n_bins: int = N_BINS

    def direct_rtf(self, positions) -> np.ndarray:
        return free_field_rtf_batch(positions, self.mic_positions, self.speed_of_sound, self.sample_rate, self.n_bins)

    def to_dict(self) -> dict:
        return {
            "mic_positions": [list(p) for p in self.mic_positions],
            "speed_of_sound": self.speed_of_sound,
            "sample_rate": self.sample_rate,
            "n_bins": self.n_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Geometry:
        return cls(
            tuple(tuple(float(v) for v in p) for p in d["mic_positions"]),
            float(d["speed_of_sound"]),
            float(d["sample_rate"]),
            int(d["n_bins"]),
        )


def finish(features: np.ndarray) -> np.ndarray:
    """Final post-map shared by every regressor: unit-norm IPD pairs."""
    return renormalize_ipd(features)[0]


class Regressor:
    kind = "base"
    needs_fit = True
    needs_grid = False

    def predict(self, positions) -> np.ndarray:
        raise NotImplementedError

    def header(self) -> dict:
        return {}

    def tensors(self) -> dict[str, np.ndarray]:
        return {}


# -- free field ----------------------------------------------------------------------------


class FreeFieldRegressor(Regressor):
    """Direct-path prediction; needs geometry only."""

    kind = "free_field"
    needs_fit = False

    def __init__(self, geometry: Geometry):
        self.geometry = geometry

    def predict(self, positions) -> np.ndarray:
        feats, _ = rtf_to_features(self.geometry.direct_rtf(positions))
        return finish(feats)


def predict_free_field(source, mics, c: float = 343.0, sample_rate: float = 16000.0) -> np.ndarray:
    from .rtf import features_from_rtf, free_field_rtf

    return features_from_rtf(free_field_rtf(source, mics, c, sample_rate)).as_array()


# -- linear interpolation ------------------------------------------------------------------


# Lattice-unit tolerance for treating a query as a node; float32 poses are off by ~1e-6.
SNAP_TOL = 1e-4


class LinearInterpModel(Regressor):
    """Interpolate stored targets from neighbouring training poses.

    ``mode="idw"`` averages the ``neighbors`` nearest poses with weights
    ``1 / (d + 1e-9) ** power``. ``mode="axis"`` averages the two stored lattice
    neighbours that bracket the query along ``axis`` after snapping the other
    coordinates to the nearest lattice column; it needs grid metadata.
    ILD, sine and cosine blocks are interpolated independently and the IPD
    pairs renormalised afterwards.
    """

    kind = "linear"

    def __init__(self, mode: str = "axis", neighbors: int = 2, power: float = 1.0, axis: int = 2):
        if mode not in ("idw", "axis"):
            raise DataError(f"unknown interpolation mode {mode!r}")
        if neighbors < 1:
            raise DataError("neighbour count must be at least 1")
        self.mode, self.neighbors, self.power, self.axis = mode, neighbors, power, axis
        self.needs_grid = mode == "axis"
        self.poses = None
        self.targets = None
        self.grid: GridInfo | None = None

    def fit(self, poses, targets, grid: GridInfo | None = None) -> LinearInterpModel:
        poses = np.asarray(poses, dtype=float)
        targets = np.asarray(targets)
        if len(poses) != len(targets):
            raise DataError("poses and targets differ in row count")
        if self.mode == "idw" and len(poses) < self.neighbors:
            raise DataError(f"need at least {self.neighbors} training pairs, got {len(poses)}")
        if self.mode == "axis" and grid is None:
            raise DataError("axis-pair interpolation needs grid metadata")
        if len(np.unique(poses, axis=0)) != len(poses):
            raise DataError("training poses must be distinct")
        self.poses, self.targets, self.grid = poses, targets, grid
        self._tree = cKDTree(poses)
        if grid is not None:
            self._build_columns()
        return self

    def _build_columns(self) -> None:
        idx = self.grid.indices(self.poses)
        other = [a for a in range(3) if a != self.axis]
        columns: dict[tuple[int, int], list] = {}
        for row, ijk in enumerate(idx):
            columns.setdefault((ijk[other[0]], ijk[other[1]]), []).append((ijk[self.axis], row))
        self._columns = {
            key: (np.array([v[0] for v in sorted(vals)]), np.array([v[1] for v in sorted(vals)]))
            for key, vals in columns.items()
        }

    def predict(self, positions) -> np.ndarray:
        q = np.atleast_2d(np.asarray(positions, dtype=float))
        raw = self._predict_idw(q) if self.mode == "idw" else self._predict_axis(q)
        return finish(raw)

    def idw_weights(self, distances: np.ndarray) -> np.ndarray:
        return 1.0 / (distances + 1e-9) ** self.power

    def _predict_idw(self, q: np.ndarray) -> np.ndarray:
        k = self.neighbors
        dist, idx = self._tree.query(q, k=k)
        dist, idx = dist.reshape(len(q), k), idx.reshape(len(q), k)
        w = self.idw_weights(dist)
        w /= w.sum(axis=1, keepdims=True)
        out = np.einsum("nk,nkd->nd", w, self.targets[idx].astype(float))
        exact = dist[:, 0] < 1e-12
        out[exact] = self.targets[idx[exact, 0]]
        return out

    def _predict_axis(self, q: np.ndarray) -> np.ndarray:
        g = self.grid
        frac = (q - np.asarray(g.origin)) / g.spacing
        other = [a for a in range(3) if a != self.axis]
        out = np.empty((len(q), self.targets.shape[1]))
        for n, f in enumerate(frac):
            key = (int(np.rint(f[other[0]])), int(np.rint(f[other[1]])))
            if key not in self._columns:
                raise ExtrapolationError(f"no stored lattice column near query {q[n].tolist()}")
            levels, rows = self._columns[key]
            t = f[self.axis]
            if t < levels[0] - SNAP_TOL or t > levels[-1] + SNAP_TOL:
                raise ExtrapolationError(f"query {q[n].tolist()} lies outside the stored axis range")
            hi = min(int(np.searchsorted(levels, t - SNAP_TOL)), len(levels) - 1)
            if abs(levels[hi] - t) <= SNAP_TOL:
                out[n] = self.targets[rows[hi]]
            else:
                out[n] = 0.5 * (self.targets[rows[hi - 1]].astype(float) + self.targets[rows[hi]])
        return out

    def header(self) -> dict:
        h = {"mode": self.mode, "neighbors": self.neighbors, "power": self.power, "axis": self.axis}
        if self.grid is not None:
            h["grid"] = self.grid.to_dict()
        return h

    def tensors(self) -> dict[str, np.ndarray]:
        return {"poses": self.poses, "targets": self.targets}


def fit_linear_interp(poses, targets, mode: str = "axis", neighbors: int = 2, grid=None, **kw) -> LinearInterpModel:
    return LinearInterpModel(mode, neighbors, **kw).fit(poses, targets, grid)


# -- piecewise affine -------------------------------------------------------------------------


class EmptyRegionError(DataError):
    def __init__(self, region: int, count: int, needed: int):
        super().__init__(
            f"region {region} received {count} training pairs, needs {needed}; refit with smaller K"
        )
        self.region = region


class PiecewiseAffineModel(Regressor):
    """K local affine maps; each pose uses the map of its nearest k-means centroid."""

    kind = "affine"

    def __init__(self, n_regions: int = 64, seed: int = 0, ridge: float = 1e-6, n_iter: int = 50, restarts: int = 3):
        if n_regions < 1:
            raise DataError("need at least one region")
        self.n_regions, self.seed, self.ridge = n_regions, seed, ridge
        self.n_iter, self.restarts = n_iter, restarts
        self.centroids = self.A = self.b = None

    def fit(self, poses, targets) -> PiecewiseAffineModel:
        x = np.asarray(poses, dtype=float)
        y = np.asarray(targets, dtype=float)
        L = x.shape[1]
        if len(x) < self.n_regions:
            raise DataError(f"{len(x)} training pairs cannot be clustered into {self.n_regions} regions")
        if self.n_regions == 1:
            centroids, labels = x.mean(axis=0, keepdims=True), np.zeros(len(x), dtype=int)
        else:
            km = KMeans(self.n_regions, n_init=self.restarts, max_iter=self.n_iter, random_state=self.seed)
            labels = km.fit_predict(x)
            centroids = km.cluster_centers_
        A = np.zeros((self.n_regions, y.shape[1], L))
        b = np.zeros((self.n_regions, y.shape[1]))
        for k in range(self.n_regions):
            sel = labels == k
            if sel.sum() < L + 1:
                raise EmptyRegionError(k, int(sel.sum()), L + 1)
            xm, ym = x[sel].mean(axis=0), y[sel].mean(axis=0)
            xc, yc = x[sel] - xm, y[sel] - ym
            gram = xc.T @ xc + self.ridge * np.eye(L)
            try:
                coef = np.linalg.solve(gram, xc.T @ yc)
            except np.linalg.LinAlgError:
                raise NumericError(f"region {k} least-squares system is singular") from None
            if not np.all(np.isfinite(coef)):
                raise NumericError(f"region {k} produced non-finite coefficients")
            A[k] = coef.T
            b[k] = ym - coef.T @ xm
        self.centroids, self.A, self.b = centroids, A, b
        self._tree = cKDTree(centroids)
        return self

    def assign(self, positions) -> np.ndarray:
        return self._tree.query(np.atleast_2d(positions))[1]

    def predict(self, positions) -> np.ndarray:
        q = np.atleast_2d(np.asarray(positions, dtype=float))
        k = self.assign(q)
        return finish(np.einsum("ndl,nl->nd", self.A[k], q) + self.b[k])

    def header(self) -> dict:
        return {"n_regions": self.n_regions, "seed": self.seed, "ridge": self.ridge}

    def tensors(self) -> dict[str, np.ndarray]:
        return {"centroids": self.centroids, "A": self.A, "b": self.b}


def fit_piecewise_affine(poses, targets, K: int = 64, seed: int = 0, **kw) -> PiecewiseAffineModel:
    return PiecewiseAffineModel(K, seed, **kw).fit(poses, targets)


# -- MLP ---------------------------------------------------------------------------------------


@dataclass
class DnnConfig:
    hidden: list[int] = field(default_factory=lambda: [1024, 1024, 1024])
    normalize_direct: bool = False
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)


class DnnRegressor(Regressor):
    """MLP from standardised positions to features.

    With ``normalize_direct`` the network learns the RTF divided by the
    free-field RTF; predictions are multiplied back before returning.
    """

    kind = "dnn"

    def __init__(self, config: DnnConfig | None = None, geometry: Geometry | None = None):
        self.config = config or DnnConfig()
        self.geometry = geometry
        if self.config.normalize_direct and geometry is None:
            raise DataError("direct-path normalisation needs the microphone geometry")
        self.model: nn.MlpModel | None = None
        self.history: list[nn.EpochRecord] = []
        self.best_epoch: int | None = None

    def _to_normalized(self, positions, targets) -> np.ndarray:
        h = features_to_rtf(targets) / self.geometry.direct_rtf(positions)
        return rtf_to_features(h)[0]

    def fit(self, poses, targets, dev_poses, dev_targets) -> DnnRegressor:
        poses, dev_poses = np.asarray(poses, float), np.asarray(dev_poses, float)
        targets, dev_targets = np.asarray(targets, float), np.asarray(dev_targets, float)
        if self.config.normalize_direct:
            targets = self._to_normalized(poses, targets)
            dev_targets = self._to_normalized(dev_poses, dev_targets)
        sizes = [poses.shape[1], *self.config.hidden, targets.shape[1]]
        model = nn.init_model(sizes, seed=self.config.train.seed, renormalize=True)
        result = nn.train(model, poses, targets, dev_poses, dev_targets, self.config.train)
        self.model, self.history, self.best_epoch = result.model, result.history, result.best_epoch
        return self

    def predict(self, positions) -> np.ndarray:
        q = np.atleast_2d(np.asarray(positions, dtype=float))
        out = nn.forward(self.model, q).astype(float)
        if self.config.normalize_direct:
            out = rtf_to_features(features_to_rtf(out) * self.geometry.direct_rtf(q))[0]
        return finish(out)

    def header(self) -> dict:
        return {
            **nn.model_header(self.model),
            "hidden": list(self.config.hidden),
            "normalize_direct": self.config.normalize_direct,
        }

    def tensors(self) -> dict[str, np.ndarray]:
        return nn.model_tensors(self.model)


def fit_dnn(poses, targets, dev_poses, dev_targets, config: DnnConfig | None = None, geometry=None) -> DnnRegressor:
    return DnnRegressor(config, geometry).fit(poses, targets, dev_poses, dev_targets)


# -- persistence ----------------------------------------------------------------------------------


def save_regressor(reg: Regressor, path, geometry: Geometry | None = None, extra: dict | None = None) -> None:
    """Write a fitted regressor into the checkpoint container, tagged by kind."""
    header = {"kind": reg.kind, reg.kind: reg.header(), **(extra or {})}
    geometry = geometry or getattr(reg, "geometry", None)
    if geometry is not None:
        header["geometry"] = geometry.to_dict()
    write_file(path, CHECKPOINT_MAGIC, header, reg.tensors(), "<f8")


def load_regressor(path) -> tuple[Regressor, dict]:
    header, tensors = read_file(path, CHECKPOINT_MAGIC)
    kind = header.get("kind")
    section = header.get(kind, {})
    geometry = Geometry.from_dict(header["geometry"]) if "geometry" in header else None
    try:
        if kind == "linear":
            grid = GridInfo.from_dict(section["grid"]) if "grid" in section else None
            reg = LinearInterpModel(section["mode"], section["neighbors"], section["power"], section["axis"])
            reg.fit(tensors["poses"], tensors["targets"], grid)
        elif kind == "affine":
            reg = PiecewiseAffineModel(section["n_regions"], section["seed"], section["ridge"])
            reg.centroids, reg.A, reg.b = tensors["centroids"], tensors["A"], tensors["b"]
            reg._tree = cKDTree(reg.centroids)
        elif kind == "dnn":
            cfg = DnnConfig(hidden=list(section["hidden"]), normalize_direct=section["normalize_direct"])
            reg = DnnRegressor(cfg, geometry)
            reg.model = nn.model_from_tensors(section, tensors)
        elif kind == "free_field":
            reg = FreeFieldRegressor(geometry)
        else:
            raise FormatError(f"unknown regressor kind {kind!r}")
    except KeyError as exc:
        raise FormatError(f"checkpoint section {kind!r} is missing {exc}") from None
    return reg, header
