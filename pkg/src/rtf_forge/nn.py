"""Feedforward regressor written directly in numpy.

Hidden layers are ``relu(layer_norm(W a + b))``; the output layer is affine,
optionally followed by per-bin unit normalisation of the (sin, cos) block of
an ``[ild | sin | cos]`` output. The loss is the mean over batch and output
dimensions of the squared error (no 1/2 factor).
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .container import read_file, write_file
from .errors import DataError, FormatError, NumericError, SizeError

log = logging.getLogger(__name__)

LN_EPS = 1e-5
RENORM_FLOOR = 1e-12
CHECKPOINT_MAGIC = b"RTFM"


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]
    ln_gains: list[np.ndarray]  # one per hidden layer
    ln_biases: list[np.ndarray]
    renormalize: bool = True
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (matches :func:`backward`)."""
        out = []
        for i in range(len(self.weights)):
            out += [self.weights[i], self.biases[i]]
            if i < len(self.ln_gains):
                out += [self.ln_gains[i], self.ln_biases[i]]
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        it = iter(params)
        for i in range(len(self.weights)):
            self.weights[i] = next(it)
            self.biases[i] = next(it)
            if i < len(self.ln_gains):
                self.ln_gains[i] = next(it)
                self.ln_biases[i] = next(it)

    def astype(self, dtype) -> MlpModel:
        conv = lambda xs: [np.asarray(x, dtype=dtype) for x in xs]  # noqa: E731
        return MlpModel(
            conv(self.weights),
            conv(self.biases),
            conv(self.ln_gains),
            conv(self.ln_biases),
            self.renormalize,
            None if self.input_mean is None else np.asarray(self.input_mean, dtype=dtype),
            None if self.input_scale is None else np.asarray(self.input_scale, dtype=dtype),
        )


def init_model(sizes, seed: int = 0, renormalize: bool = True, dtype=np.float64) -> MlpModel:
    """Gaussian weights with std ``sqrt(1 / in_size)``, zero biases, unit LN gains."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3 or min(sizes) < 1:
        raise SizeError(f"need input, at least one hidden, and output width; got {sizes}")
    if renormalize and sizes[-1] % 3:
        raise SizeError("IPD renormalisation needs an output width divisible by 3")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append((rng.standard_normal((n_out, n_in)) * np.sqrt(1.0 / n_in)).astype(dtype))
        biases.append(np.zeros(n_out, dtype=dtype))
    hidden = sizes[1:-1]
    return MlpModel(
        weights,
        biases,
        [np.ones(h, dtype=dtype) for h in hidden],
        [np.zeros(h, dtype=dtype) for h in hidden],
        renormalize,
    )


# -- layers ------------------------------------------------------------------------


def layer_norm(a, gain, bias, eps: float = LN_EPS):
    """Normalise over the last axis (biased variance), then scale and shift."""
    a = np.asarray(a)
    if a.shape[-1] < 2:
        raise SizeError("layer norm needs at least two units")
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    return centered * inv * gain + bias


def _layer_norm_fwd(a, gain, bias, eps=LN_EPS):
    mu = a.mean(axis=-1, keepdims=True)
    centered = a - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    return xhat * gain + bias, (xhat, inv)


def _layer_norm_bwd(dy, gain, cache):
    xhat, inv = cache
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dx = dy * gain
    da = inv * (dx - dx.mean(axis=-1, keepdims=True) - xhat * (dx * xhat).mean(axis=-1, keepdims=True))
    return da, dgain, dbias


def ipd_renorm(o):
    """Unit-normalise each (sin, cos) pair of ``[ild | sin | cos]`` rows."""
    return _ipd_renorm_fwd(o)[0]


def _ipd_renorm_fwd(o):
    n = o.shape[-1] // 3
    s, c = o[..., n : 2 * n], o[..., 2 * n :]
    r = np.sqrt(s * s + c * c)
    bad = r < RENORM_FLOOR
    r_safe = np.where(bad, 1.0, r)
    out = o.copy()
    out[..., n : 2 * n] = np.where(bad, 0.0, s / r_safe)
    out[..., 2 * n :] = np.where(bad, 1.0, c / r_safe)
    return out, (s, c, r_safe, bad)


def _ipd_renorm_bwd(dy, cache):
    s, c, r, bad = cache
    n = s.shape[-1]
    ds_out, dc_out = dy[..., n : 2 * n], dy[..., 2 * n :]
    cross = (ds_out * c - dc_out * s) / (r * r * r)
    dx = dy.copy()
    dx[..., n : 2 * n] = np.where(bad, 0.0, c * cross)
    dx[..., 2 * n :] = np.where(bad, 0.0, -s * cross)
    return dx


# -- forward / backward ------------------------------------------------------------------


def _standardize(model: MlpModel, x):
    if model.input_mean is None:
        return x
    return (x - model.input_mean) / model.input_scale


def _check_input(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=model.dtype)
    if x.shape[-1] != model.weights[0].shape[1]:
        raise SizeError(f"input width {x.shape[-1]} does not match model input {model.weights[0].shape[1]}")
    return x


def _forward(model: MlpModel, x, post: bool):
    caches = []
    a = _standardize(model, x)
    n_hidden = len(model.weights) - 1
    for i in range(n_hidden):
        z = a @ model.weights[i].T + model.biases[i]
        y, ln_cache = _layer_norm_fwd(z, model.ln_gains[i], model.ln_biases[i])
        caches.append((a, ln_cache, y > 0))
        a = np.maximum(y, 0)
    out = a @ model.weights[-1].T + model.biases[-1]
    caches.append(a)
    renorm_cache = None
    if post and model.renormalize:
        out, renorm_cache = _ipd_renorm_fwd(out)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network output")
    return out, (caches, renorm_cache)


def forward(model: MlpModel, x, post: bool = True) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    x = _check_input(model, x)
    single = x.ndim == 1
    out, _ = _forward(model, np.atleast_2d(x), post)
    return out[0] if single else out


def mse(pred, target) -> float:
    diff = np.asarray(pred) - np.asarray(target)
    return float(np.mean(diff * diff))


def backward(model: MlpModel, x, target, post: bool = True) -> tuple[list[np.ndarray], float]:
    """Gradients of the MSE loss for every array in ``model.params()``, and the loss."""
    x = np.atleast_2d(_check_input(model, x))
    target = np.atleast_2d(np.asarray(target, dtype=model.dtype))
    out, (caches, renorm_cache) = _forward(model, x, post)
    if target.shape != out.shape:
        raise SizeError(f"target shape {target.shape} does not match output {out.shape}")
    diff = out - target
    loss = float(np.mean(diff * diff))
    d = (2.0 / diff.size) * diff
    if renorm_cache is not None:
        d = _ipd_renorm_bwd(d, renorm_cache)
    n_hidden = len(model.weights) - 1
    grads: list = [None] * len(model.params())
    a = caches[-1]
    gw, gb = d.T @ a, d.sum(axis=0)
    pos = len(grads) - 2
    grads[pos], grads[pos + 1] = gw, gb
    d = d @ model.weights[-1]
    for i in range(n_hidden - 1, -1, -1):
        a_in, ln_cache, active = caches[i]
        d = d * active
        dz, dgain, dbias = _layer_norm_bwd(d, model.ln_gains[i], ln_cache)
        pos = 4 * i
        grads[pos] = dz.T @ a_in
        grads[pos + 1] = dz.sum(axis=0)
        grads[pos + 2] = dgain
        grads[pos + 3] = dbias
        if i > 0:
            d = dz @ model.weights[i]
    return grads, loss


# -- optimiser ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr: float = 1e-3) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise SizeError("parameter, gradient and moment lists differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise SizeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params


# -- training ----------------------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 5
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    plateau_epochs: int = 2
    lr_floor: float = 1e-5
    seed: int = 0
    renorm_in_training: bool = True
    dtype: str = "float32"
    # 0 means one pass per epoch; otherwise each epoch (dev-check interval) runs at
    # least this many minibatch steps, reshuffling between passes.
    min_steps_per_epoch: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise DataError("patience must be at least 1")
        if self.batch_size < 1:
            raise DataError("batch size must be at least 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    learning_rate: float


@dataclass
class EarlyStopping:
    """Tracks the best dev loss, the plateau length, and the learning rate."""

    patience: int
    lr: float
    lr_decay: float = 0.5
    plateau_epochs: int = 2
    lr_floor: float = 1e-5
    best: float = np.inf
    best_epoch: int = 0
    bad_epochs: int = 0

    def update(self, epoch: int, dev_loss: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if dev_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = dev_loss, epoch, 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs % self.plateau_epochs == 0:
            self.lr = max(self.lr * self.lr_decay, self.lr_floor)
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    model: MlpModel
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and scale; constant columns pass through unchanged."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    const = std < 1e-12
    return np.where(const, 0.0, mean), np.where(const, 1.0, std)


def train(model: MlpModel, train_x, train_y, dev_x, dev_y, config: TrainConfig | None = None) -> TrainResult:
    """Minibatch Adam on MSE with dev-based LR halving and early stopping.

    Returns a copy of the parameters from the epoch with the lowest dev loss.
    """
    config = config or TrainConfig()
    train_x, train_y = np.asarray(train_x), np.asarray(train_y)
    dev_x, dev_y = np.asarray(dev_x), np.asarray(dev_y)
    if len(train_x) == 0 or len(dev_x) == 0:
        raise DataError("training and development sets must be non-empty")
    if len(train_x) != len(train_y) or len(dev_x) != len(dev_y):
        raise DataError("inputs and targets differ in row count")
    dtype = np.dtype(config.dtype)
    model = model.astype(dtype)
    mean, scale = standardization(train_x.astype(np.float64))
    model.input_mean, model.input_scale = mean.astype(dtype), scale.astype(dtype)
    tx, ty = train_x.astype(dtype), train_y.astype(dtype)
    dx, dy = dev_x.astype(dtype), dev_y.astype(dtype)

    params = model.params()
    adam = AdamState.zeros_like(params, config.learning_rate)
    stopper = EarlyStopping(
        config.patience, config.learning_rate, config.lr_decay, config.plateau_epochs, config.lr_floor
    )
    rng = np.random.default_rng(config.seed)
    history: list[EpochRecord] = []
    best_params = [p.copy() for p in params]
    n = len(tx)
    for epoch in range(1, config.max_epochs + 1):
        adam.lr = stopper.lr
        total, seen, steps = 0.0, 0, 0
        while steps == 0 or steps < config.min_steps_per_epoch:
            order = rng.permutation(n)
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                grads, loss = backward(model, tx[idx], ty[idx], post=config.renorm_in_training)
                adam_step(adam, params, grads)
                total += loss * len(idx)
                seen += len(idx)
                steps += 1
                if config.min_steps_per_epoch and steps >= config.min_steps_per_epoch and seen >= n:
                    break
        dev_loss = mse(forward(model, dx), dy)
        history.append(EpochRecord(epoch, total / seen, dev_loss, adam.lr))
        log.debug("epoch %d train %.5g dev %.5g lr %.2g", epoch, total / seen, dev_loss, adam.lr)
        if not np.isfinite(dev_loss):
            raise NumericError(f"development loss became non-finite at epoch {epoch}")
        improved = dev_loss < stopper.best
        stop = stopper.update(epoch, dev_loss)
        if improved:
            best_params = [p.copy() for p in params]
        if stop:
            break
    best = copy.copy(model)
    best.weights, best.biases = list(model.weights), list(model.biases)
    best.ln_gains, best.ln_biases = list(model.ln_gains), list(model.ln_biases)
    best.set_params(best_params)
    return TrainResult(best, history, stopper.best_epoch)


# -- persistence ----------------------------------------------------------------------------


def model_tensors(model: MlpModel, prefix: str = "") -> dict[str, np.ndarray]:
    tensors = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        tensors[f"{prefix}W{i}"] = w
        tensors[f"{prefix}b{i}"] = b
    for i, (g, b) in enumerate(zip(model.ln_gains, model.ln_biases)):
        tensors[f"{prefix}ln_gain{i}"] = g
        tensors[f"{prefix}ln_bias{i}"] = b
    if model.input_mean is not None:
        tensors[f"{prefix}input_mean"] = model.input_mean
        tensors[f"{prefix}input_scale"] = model.input_scale
    return tensors


def model_header(model: MlpModel) -> dict:
    return {
        "topology": model.sizes,
        "renormalize": model.renormalize,
        "param_dtype": np.dtype(model.dtype).name,
    }


def model_from_tensors(header: dict, tensors: dict[str, np.ndarray], prefix: str = "") -> MlpModel:
    try:
        sizes = header["topology"]
        dtype = np.dtype(header.get("param_dtype", "float64"))
        n_layers = len(sizes) - 1
        get = lambda name: tensors[prefix + name].astype(dtype)  # noqa: E731
        model = MlpModel(
            [get(f"W{i}") for i in range(n_layers)],
            [get(f"b{i}") for i in range(n_layers)],
            [get(f"ln_gain{i}") for i in range(n_layers - 1)],
            [get(f"ln_bias{i}") for i in range(n_layers - 1)],
            bool(header["renormalize"]),
        )
        if prefix + "input_mean" in tensors:
            model.input_mean, model.input_scale = get("input_mean"), get("input_scale")
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing {exc}") from None
    if model.sizes != list(sizes):
        raise FormatError(f"tensor shapes disagree with topology {sizes}")
    return model


def save_model(model: MlpModel, path, extra: dict | None = None) -> None:
    header = {"kind": "mlp", **model_header(model), **(extra or {})}
    write_file(path, CHECKPOINT_MAGIC, header, model_tensors(model), "<f8")


def load_model(path) -> MlpModel:
    header, tensors = read_file(path, CHECKPOINT_MAGIC)
    return model_from_tensors(header, tensors)


def history_rows(history: list[EpochRecord]) -> list[dict]:
    return [asdict(h) for h in history]
