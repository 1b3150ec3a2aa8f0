"""Dense MLP core: forward pass, backprop from an injected output delta, optimizers.

All tensors are float64 numpy arrays. Hidden layers use ReLU; the last layer
emits raw logits so callers control what gradient enters the network (the
output delta is the gradient of the loss w.r.t. the logits). Batch gradients
are means over the batch, so the learning rate is independent of batch size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericError

# Refuse obviously mis-sized models before allocating them.
MAX_PARAMETERS = 10**7

MODEL_MAGIC = b"FGM1"


@dataclass
class MlpModel:
    """Fully-connected network parameters.

    weights[l] has shape (layer_dims[l], layer_dims[l+1]); biases[l] has
    shape (layer_dims[l+1],).
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class ForwardTrace:
    """Per-layer tensors cached by forward() for the backward pass."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    post_activations: list[np.ndarray]


@dataclass
class Gradients:
    """Loss gradients, one tensor per parameter tensor of the model."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Gradients":
        return Gradients([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_params(layer_dims: list[int], seed) -> MlpModel:
    """Build a model with fan-in-scaled uniform weights and zero biases.

    Weights are drawn from U(-sqrt(6/fan_in), +sqrt(6/fan_in)); the draw is a
    pure function of (layer_dims, seed). `seed` is anything accepted by
    numpy.random.default_rng (int or sequence of ints).
    """
    if len(layer_dims) < 2:
        raise ConfigError(f"layer_dims needs at least 2 entries, got {layer_dims}")
    for d in layer_dims:
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ConfigError(f"layer dimensions must be positive integers, got {layer_dims}")
    n_params = sum(
        layer_dims[l] * layer_dims[l + 1] + layer_dims[l + 1]
        for l in range(len(layer_dims) - 1)
    )
    if n_params > MAX_PARAMETERS:
        raise ConfigError(
            f"model with {n_params} parameters exceeds the {MAX_PARAMETERS} limit"
        )

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for l in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[l], layer_dims[l + 1]
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_dims=list(layer_dims), weights=weights, biases=biases)


def forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network on a (n, input_dim) batch; returns (logits, trace)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise DimensionError(
            f"batch shape {batch.shape} incompatible with input dim {model.input_dim}"
        )
    n_layers = len(model.weights)
    pre = []
    post = []
    a = batch
    for l in range(n_layers):
        z = a @ model.weights[l] + model.biases[l]
        pre.append(z)
        a = np.maximum(z, 0.0) if l < n_layers - 1 else z
        post.append(a)
    return post[-1], ForwardTrace(inputs=batch, pre_activations=pre, post_activations=post)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for overflow safety."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def backward(model: MlpModel, trace: ForwardTrace, output_delta: np.ndarray) -> Gradients:
    """Backpropagate an output-layer delta (dL/dlogits) to parameter gradients.

    Gradients are means over the batch: the per-sample vector-Jacobian
    products summed and divided by the batch size.
    """
    output_delta = np.asarray(output_delta, dtype=np.float64)
    logits = trace.post_activations[-1]
    if output_delta.shape != logits.shape:
        raise DimensionError(
            f"output delta shape {output_delta.shape} != logits shape {logits.shape}"
        )
    n = output_delta.shape[0]
    n_layers = len(model.weights)
    grad_w: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]

    dz = output_delta / n
    for l in range(n_layers - 1, -1, -1):
        a_prev = trace.post_activations[l - 1] if l > 0 else trace.inputs
        grad_w[l] = a_prev.T @ dz
        grad_b[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ model.weights[l].T
            dz = da * (trace.pre_activations[l - 1] > 0.0)
    return Gradients(weights=grad_w, biases=grad_b)


@dataclass
class OptimizerState:
    """Momentum or Adam buffers mirroring the model's parameter shapes."""

    kind: str  # "sgd" | "adam"
    lr: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    # sgd: m_* are velocity buffers and v_* stay unused (empty lists).
    m_weights: list[np.ndarray] = None  # type: ignore[assignment]
    m_biases: list[np.ndarray] = None  # type: ignore[assignment]
    v_weights: list[np.ndarray] = None  # type: ignore[assignment]
    v_biases: list[np.ndarray] = None  # type: ignore[assignment]


def init_optimizer(
    kind: str,
    model: MlpModel,
    lr: float,
    momentum: float = 0.9,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    state = OptimizerState(
        kind=kind, lr=lr, momentum=momentum, beta1=beta1, beta2=beta2, eps=eps
    )
    state.m_weights = [np.zeros_like(w) for w in model.weights]
    state.m_biases = [np.zeros_like(b) for b in model.biases]
    if kind == "adam":
        state.v_weights = [np.zeros_like(w) for w in model.weights]
        state.v_biases = [np.zeros_like(b) for b in model.biases]
    else:
        state.v_weights = []
        state.v_biases = []
    return state


def _check_finite(grad: np.ndarray, name: str) -> None:
    # Sum-reduction: NaN/Inf anywhere poisons the sum, one pass instead of an
    # elementwise scan in the hot loop.
    if not np.isfinite(grad.sum()):
        raise NumericError(f"non-finite gradient in {name}")


def optimizer_step(
    model: MlpModel, grads: Gradients, state: OptimizerState
) -> tuple[MlpModel, OptimizerState]:
    """Apply one update in place; returns the same (model, state) pair.

    SGD-momentum: v <- momentum*v + g; w <- w - lr*v (momentum 0 is plain SGD).
    Adam: bias-corrected first/second moments.
    """
    if len(grads.weights) != len(model.weights) or len(grads.biases) != len(model.biases):
        raise DimensionError("gradient tensor count does not match model")
    for l, (g, w) in enumerate(zip(grads.weights, model.weights)):
        if g.shape != w.shape:
            raise DimensionError(f"weights[{l}] gradient shape {g.shape} != {w.shape}")
        _check_finite(g, f"weights[{l}]")
    for l, (g, b) in enumerate(zip(grads.biases, model.biases)):
        if g.shape != b.shape:
            raise DimensionError(f"biases[{l}] gradient shape {g.shape} != {b.shape}")
        _check_finite(g, f"biases[{l}]")

    state.step_count += 1
    if state.kind == "sgd":
        for params, vels, gs in (
            (model.weights, state.m_weights, grads.weights),
            (model.biases, state.m_biases, grads.biases),
        ):
            for p, v, g in zip(params, vels, gs):
                v *= state.momentum
                v += g
                p -= state.lr * v
    else:
        t = state.step_count
        bc1 = 1.0 - state.beta1**t
        bc2 = 1.0 - state.beta2**t
        for params, ms, vs, gs in (
            (model.weights, state.m_weights, state.v_weights, grads.weights),
            (model.biases, state.m_biases, state.v_biases, grads.biases),
        ):
            for p, m, v, g in zip(params, ms, vs, gs):
                m *= state.beta1
                m += (1.0 - state.beta1) * g
                v *= state.beta2
                v += (1.0 - state.beta2) * np.square(g)
                p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return model, state


def save_model(model: MlpModel, path) -> None:
    """Write the model as a little-endian flat dump with a shape header.

    Layout: magic b"FGM1"; uint32 L = len(layer_dims); L x uint32 dims; then
    per layer the weight matrix (row-major float64) followed by the bias
    vector (float64).
    """
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(model.layer_dims)))
        f.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    """Inverse of save_model; validates magic and payload length."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"bad model file magic {raw[:4]!r}, expected {MODEL_MAGIC!r}")
    try:
        (n_dims,) = struct.unpack_from("<I", raw, 4)
        dims = list(struct.unpack_from(f"<{n_dims}I", raw, 8))
        offset = 8 + 4 * n_dims
        weights = []
        biases = []
        for l in range(n_dims - 1):
            w_count = dims[l] * dims[l + 1]
            w = np.frombuffer(raw, dtype="<f8", count=w_count, offset=offset).reshape(
                dims[l], dims[l + 1]
            )
            offset += 8 * w_count
            b = np.frombuffer(raw, dtype="<f8", count=dims[l + 1], offset=offset)
            offset += 8 * dims[l + 1]
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise DataError(f"model file truncated at byte {len(raw)}: {exc}") from exc
    if offset != len(raw):
        raise DataError(f"model file has {len(raw) - offset} unexpected trailing bytes")
    return MlpModel(layer_dims=dims, weights=weights, biases=biases)
