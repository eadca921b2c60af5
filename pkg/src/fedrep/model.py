"""Two-layer stacked LSTM forecaster with a dense multi-step head.

The model is trained from scratch: exact backpropagation through time,
plain SGD, per-sequence (variational) dropout on layer inputs and
recurrent states. Parameters live in small dataclasses wrapping float64
numpy arrays; the numeric work happens in :mod:`fedrep.kernels`.

Within each stacked weight matrix the four gate blocks are ordered
[input, forget, output, candidate]. The flat parameter vector orders
layer 1's gates (each W, then U, then b), layer 2's gates the same way,
then the dense weights row-major and the dense bias. The wire format is a
16-byte header (magic ``FREP``, little-endian uint32 version, uint64
parameter count) followed by the vector as little-endian float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import WindowedDataset
from .rng import derive_seed

__all__ = [
    "ModelDims",
    "LstmLayerParams",
    "ModelParams",
    "Gradients",
    "TrainConfig",
    "ForwardCache",
    "GATE_ORDER",
    "init_params",
    "param_count",
    "forward",
    "backward",
    "sgd_step",
    "flatten",
    "unflatten",
    "serialize_vector",
    "deserialize_vector",
    "params_equal",
    "predict",
    "local_train",
]

GATE_ORDER = ("input", "forget", "output", "candidate")

MAGIC = b"FREP"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQ")  # magic, version, parameter count


@dataclass(frozen=True)
class ModelDims:
    """Architecture sizes; (256, 128) hidden units is the default."""

    input_size: int = 1
    hidden1: int = 256
    hidden2: int = 128
    horizon: int = 5

    def __post_init__(self) -> None:
        for name in ("input_size", "hidden1", "hidden2", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(eq=False)
class LstmLayerParams:
    """One LSTM layer's stacked weights: W (4H, in), U (4H, H), b (4H,)."""

    input_size: int
    hidden_size: int
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        h, n = self.hidden_size, self.input_size
        if self.W.shape != (4 * h, n) or self.U.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise ValueError(
                f"layer arrays inconsistent with input={n}, hidden={h}: "
                f"W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )
        if not (np.isfinite(self.W).all() and np.isfinite(self.U).all() and np.isfinite(self.b).all()):
            raise ValueError("layer parameters must be finite")

    def gate_rows(self, gate: str) -> slice:
        """Row slice of the stacked arrays belonging to a named gate."""
        k = GATE_ORDER.index(gate)
        h = self.hidden_size
        return slice(k * h, (k + 1) * h)


@dataclass(eq=False)
class ModelParams:
    """All weights of the stacked LSTM plus the dense output head."""

    dims: ModelDims
    layer1: LstmLayerParams
    layer2: LstmLayerParams
    dense_W: np.ndarray  # (horizon, hidden2)
    dense_b: np.ndarray  # (horizon,)

    def __post_init__(self) -> None:
        d = self.dims
        if self.layer1.input_size != d.input_size or self.layer1.hidden_size != d.hidden1:
            raise ValueError("layer1 does not match declared dimensions")
        if self.layer2.input_size != d.hidden1 or self.layer2.hidden_size != d.hidden2:
            raise ValueError("layer2 must consume layer1's hidden state")
        if self.dense_W.shape != (d.horizon, d.hidden2) or self.dense_b.shape != (d.horizon,):
            raise ValueError(
                f"dense head must be ({d.horizon}, {d.hidden2}) + ({d.horizon},), "
                f"got {self.dense_W.shape} + {self.dense_b.shape}"
            )
        if not (np.isfinite(self.dense_W).all() and np.isfinite(self.dense_b).all()):
            raise ValueError("dense parameters must be finite")


# Gradients share the exact container shape of the parameters they
# differentiate; an alias keeps signatures honest without a parallel class.
Gradients = ModelParams


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD settings."""

    learning_rate: float = 0.01
    dropout_rate: float = 0.2
    batch_size: int = 32
    local_epochs: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be non-negative")


@dataclass(eq=False)
class ForwardCache:
    """Everything backward() needs from a forward pass."""

    window: np.ndarray
    masks: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    arrays: tuple  # per-layer activations and head pre-activation, kernel order
    prediction: np.ndarray
    hidden1: int = field(init=False)
    hidden2: int = field(init=False)

    def __post_init__(self) -> None:
        self.hidden1 = self.masks[1].shape[0]
        self.hidden2 = self.masks[3].shape[0]


def param_count(dims: ModelDims) -> int:
    """Total number of scalar parameters for the given sizes."""
    n, h1, h2, out = dims.input_size, dims.hidden1, dims.hidden2, dims.horizon
    return 4 * (h1 * n + h1 * h1 + h1) + 4 * (h2 * h1 + h2 * h2 + h2) + out * h2 + out


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _init_layer(rng: np.random.Generator, n_in: int, h: int) -> LstmLayerParams:
    W = np.empty((4 * h, n_in))
    U = np.empty((4 * h, h))
    for k in range(4):
        W[k * h : (k + 1) * h] = _glorot(rng, h, n_in)
        U[k * h : (k + 1) * h] = _glorot(rng, h, h)
    b = np.zeros(4 * h)
    b[h : 2 * h] = 1.0  # forget gate bias
    return LstmLayerParams(input_size=n_in, hidden_size=h, W=W, U=U, b=b)


def init_params(dims: ModelDims = ModelDims(), seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases except forget-gate biases of 1."""
    rng = np.random.default_rng(seed)
    layer1 = _init_layer(rng, dims.input_size, dims.hidden1)
    layer2 = _init_layer(rng, dims.hidden1, dims.hidden2)
    dense_W = _glorot(rng, dims.horizon, dims.hidden2)
    dense_b = np.zeros(dims.horizon)
    return ModelParams(dims=dims, layer1=layer1, layer2=layer2, dense_W=dense_W, dense_b=dense_b)


def _arrays(params: ModelParams) -> tuple:
    return (
        params.layer1.W, params.layer1.U, params.layer1.b,
        params.layer2.W, params.layer2.U, params.layer2.b,
        params.dense_W, params.dense_b,
    )


def _from_arrays(dims: ModelDims, arrays: tuple) -> ModelParams:
    W1, U1, b1, W2, U2, b2, Wd, bd = arrays
    return ModelParams(
        dims=dims,
        layer1=LstmLayerParams(dims.input_size, dims.hidden1, W1, U1, b1),
        layer2=LstmLayerParams(dims.hidden1, dims.hidden2, W2, U2, b2),
        dense_W=Wd,
        dense_b=bd,
    )


def flatten(params: ModelParams) -> np.ndarray:
    """Flatten to the documented fixed ordering."""
    pieces = []
    for layer in (params.layer1, params.layer2):
        h = layer.hidden_size
        for k in range(4):
            rows = slice(k * h, (k + 1) * h)
            pieces.append(layer.W[rows].ravel())
            pieces.append(layer.U[rows].ravel())
            pieces.append(layer.b[rows])
    pieces.append(params.dense_W.ravel())
    pieces.append(params.dense_b)
    return np.concatenate(pieces)


def unflatten(vector: np.ndarray, dims: ModelDims = ModelDims()) -> ModelParams:
    """Inverse of :func:`flatten`; raises on length mismatch."""
    vector = np.asarray(vector, dtype=np.float64)
    expected = param_count(dims)
    if vector.ndim != 1 or len(vector) != expected:
        raise ValueError(f"parameter vector must have length {expected}, got {vector.shape}")
    pos = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        size = int(np.prod(shape))
        out = vector[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    layers = []
    for n_in, h in ((dims.input_size, dims.hidden1), (dims.hidden1, dims.hidden2)):
        W = np.empty((4 * h, n_in))
        U = np.empty((4 * h, h))
        b = np.empty(4 * h)
        for k in range(4):
            rows = slice(k * h, (k + 1) * h)
            W[rows] = take((h, n_in))
            U[rows] = take((h, h))
            b[rows] = take((h,))
        layers.append(LstmLayerParams(n_in, h, W, U, b))
    dense_W = take((dims.horizon, dims.hidden2))
    dense_b = take((dims.horizon,))
    return ModelParams(dims=dims, layer1=layers[0], layer2=layers[1], dense_W=dense_W, dense_b=dense_b)


def serialize_vector(vector: np.ndarray) -> bytes:
    """Wire format: FREP header + little-endian float64 payload."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1:
        raise ValueError("only flat parameter vectors are serialized")
    return HEADER.pack(MAGIC, FORMAT_VERSION, len(vector)) + vector.astype("<f8").tobytes()


def deserialize_vector(data: bytes) -> np.ndarray:
    """Parse the wire format back into a flat float64 vector."""
    if len(data) < HEADER.size:
        raise ValueError(f"payload shorter than the {HEADER.size}-byte header")
    magic, version, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}; not a serialized parameter vector")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    if len(data) != HEADER.size + 8 * count:
        raise ValueError(
            f"length mismatch: header declares {count} parameters "
            f"({HEADER.size + 8 * count} bytes), payload has {len(data)}"
        )
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size).astype(np.float64)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bit-level equality of two parameter sets."""
    return a.dims == b.dims and all(
        np.array_equal(x, y) for x, y in zip(_arrays(a), _arrays(b))
    )


def _as_window(window: np.ndarray, dims: ModelDims) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        if dims.input_size != 1:
            raise ValueError("1-D window is only valid for single-feature models")
        window = window[:, None]
    if window.ndim != 2 or window.shape[1] != dims.input_size:
        raise ValueError(f"window must be (T, {dims.input_size}), got {window.shape}")
    if not np.isfinite(window).all():
        raise ValueError("window contains non-finite values")
    return np.ascontiguousarray(window)


def _draw_masks(rng: np.random.Generator, rate: float, sizes: tuple[int, ...], batch: int) -> list[np.ndarray]:
    # Bernoulli keep masks scaled by 1/(1 - rate); expectation-preserving.
    if rate == 0.0:
        return [np.ones((batch, n)) for n in sizes]
    keep = 1.0 - rate
    return [(rng.random((batch, n)) >= rate) / keep for n in sizes]


def forward(
    params: ModelParams,
    window: np.ndarray,
    dropout_rate: float = 0.0,
    dropout_seed: int = 0,
) -> tuple[np.ndarray, ForwardCache]:
    """One window through the network.

    ``dropout_rate == 0`` is inference mode. In train mode, per-sequence
    masks are drawn from ``dropout_seed`` for both layers' inputs and
    recurrent states, scaled by 1/(1 - rate), and recorded in the cache so
    backward() sees the same network the forward pass used.
    """
    d = params.dims
    x = _as_window(window, d)
    rng = np.random.default_rng(dropout_seed)
    mx1, mh1, mx2, mh2 = (
        m[0] for m in _draw_masks(rng, dropout_rate, (d.input_size, d.hidden1, d.hidden1, d.hidden2), 1)
    )
    res = kernels.forward_window(x, *_arrays(params), mx1, mh1, mx2, mh2)
    yhat = res[0]
    if not np.isfinite(yhat).all():
        raise FloatingPointError("non-finite prediction; forward pass overflowed")
    cache = ForwardCache(window=x, masks=(mx1, mh1, mx2, mh2), arrays=res[1:], prediction=yhat)
    return yhat.copy(), cache


def backward(params: ModelParams, cache: ForwardCache, target: np.ndarray) -> Gradients:
    """Exact MSE gradients via backpropagation through time."""
    d = params.dims
    if cache.hidden1 != d.hidden1 or cache.hidden2 != d.hidden2:
        raise ValueError("cache was produced by a model of different dimensions")
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (d.horizon,):
        raise ValueError(f"target must have shape ({d.horizon},), got {target.shape}")
    W1, U1, b1, W2, U2, b2, Wd, bd = _arrays(params)
    grads = tuple(np.zeros_like(a) for a in (W1, U1, b1, W2, U2, b2, Wd, bd))
    zd = cache.arrays[0]
    kernels.backward_window(
        target, cache.prediction, zd, *cache.arrays[1:],
        W1, U1, W2, U2, Wd, *cache.masks, *grads,
    )
    return _from_arrays(d, grads)


def sgd_step(params: ModelParams, grads: Gradients, learning_rate: float) -> ModelParams:
    """Plain gradient step: p' = p - learning_rate * g, elementwise."""
    if params.dims != grads.dims:
        raise ValueError("parameter and gradient dimensions differ")
    if not (np.isfinite(learning_rate) and learning_rate >= 0):
        raise ValueError(f"learning rate must be finite and non-negative, got {learning_rate}")
    new = tuple(p - learning_rate * g for p, g in zip(_arrays(params), _arrays(grads)))
    return _from_arrays(params.dims, new)


def predict(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Inference-mode predictions for a batch of windows: (N, horizon)."""
    d = params.dims
    xb = np.asarray(inputs, dtype=np.float64)
    if xb.ndim == 2:
        if d.input_size != 1:
            raise ValueError("2-D input batch is only valid for single-feature models")
        xb = xb[:, :, None]
    if xb.ndim != 3 or xb.shape[2] != d.input_size:
        raise ValueError(f"inputs must be (N, T, {d.input_size}), got {xb.shape}")
    return kernels.predict_batch(np.ascontiguousarray(xb), *_arrays(params))


def local_train(
    params: ModelParams,
    data: WindowedDataset,
    config: TrainConfig,
    epoch_seeds: list[int] | None = None,
) -> tuple[ModelParams, float]:
    """Mini-batch SGD over the dataset; returns new parameters and the mean
    training MSE of the final epoch.

    Each epoch shuffles deterministically with a seed derived from
    (config.seed, epoch index), or from the explicit ``epoch_seeds``
    schedule when given. The batch gradient is the mean of per-example
    gradients. ``local_epochs == 0`` performs no update and reports the
    inference-mode MSE instead.
    """
    d = params.dims
    if d.input_size != 1:
        raise ValueError("windowed training data is single-feature")
    if data.count < 1:
        raise ValueError("cannot train on an empty dataset")
    if data.lookahead != d.horizon:
        raise ValueError(f"targets have {data.lookahead} steps, model predicts {d.horizon}")
    if epoch_seeds is not None and len(epoch_seeds) != config.local_epochs:
        raise ValueError("epoch_seeds must provide one seed per local epoch")

    if config.local_epochs == 0:
        preds = predict(params, data.inputs)
        residual = preds - data.targets
        return params, float(np.mean(residual * residual))

    arrays = tuple(a.copy() for a in _arrays(params))
    xb_all = np.ascontiguousarray(data.inputs[:, :, None])
    n = data.count
    mask_sizes = (d.input_size, d.hidden1, d.hidden1, d.hidden2)
    epoch_mse = np.nan
    for epoch in range(config.local_epochs):
        seed = epoch_seeds[epoch] if epoch_seeds is not None else derive_seed(config.seed, epoch)
        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = np.ascontiguousarray(xb_all[idx])
            yb = np.ascontiguousarray(data.targets[idx])
            masks = _draw_masks(rng, config.dropout_rate, mask_sizes, len(idx))
            *grads, batch_loss = kernels.batch_grad(xb, yb, *arrays, *masks)
            for a, g in zip(arrays, grads):
                a -= config.learning_rate * g
            loss_sum += batch_loss * len(idx)
        epoch_mse = loss_sum / n
        if not np.isfinite(epoch_mse):
            raise FloatingPointError(f"training diverged at epoch {epoch} (mse={epoch_mse})")
    return _from_arrays(d, arrays), float(epoch_mse)
