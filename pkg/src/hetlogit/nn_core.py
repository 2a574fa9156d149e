"""Minimal dense feedforward network with manual backpropagation.

The network body maps inputs through relu hidden layers to a linear
output layer. It knows nothing about likelihoods: callers supply a loss
adapter that, for a mini-batch of network outputs, returns the scalar
loss and its gradient with respect to those outputs. The structured
estimators plug their model layer in through that adapter.

Training uses Adam (step 1e-3, betas 0.9/0.999, eps 1e-8) on
mini-batches, adds an l2 penalty on the weight matrices (never the
biases), applies inverted dropout to hidden activations in train mode,
and stops early once the absolute change of the epoch-average loss
stays below `loss_tolerance` for `patience` consecutive epochs. The
parameters returned are those of the epoch with the best in-sample
loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InputError, TrainingDivergedError

ADAM_STEP = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_widths: tuple[int, ...] = (100,)
    output_dim: int = 1
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    dropout_rate: float = 0.0
    l2_penalty: float = 0.0
    max_epochs: int = 20000
    batch_size: int = 50
    loss_tolerance: float = 1e-8
    patience: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        dims = (self.input_dim, self.output_dim) + self.hidden_widths
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"all dimensions must be >= 1, got {dims}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.l2_penalty < 0.0 or self.loss_tolerance < 0.0:
            raise ConfigurationError("penalty and tolerance must be nonnegative")
        if self.hidden_activation != "relu" or self.output_activation != "linear":
            raise ConfigurationError("only relu hidden / linear output layers are supported")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden_widths + (self.output_dim,)


@dataclass(frozen=True)
class NetworkParams:
    """Fitted (or freshly initialized) parameters; immutable and shareable."""

    spec: NetworkSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    trace: tuple[float, ...] = field(default=())  # per-epoch in-sample loss
    best_epoch: int = -1

    def __post_init__(self):
        def freeze(a):
            a = np.ascontiguousarray(a, dtype=float)
            if a.flags.writeable:
                a = a.copy()  # never flip the flag on a caller's array
                a.flags.writeable = False
            return a

        object.__setattr__(self, "weights", tuple(freeze(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(freeze(b) for b in self.biases))
        object.__setattr__(self, "trace", tuple(float(v) for v in self.trace))

    def weight_norm_sq(self) -> float:
        return float(sum((w * w).sum() for w in self.weights))


def init_network(spec: NetworkSpec) -> NetworkParams:
    """He-uniform weights scaled by fan-in, zero biases, seed-deterministic."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(spec=spec, weights=tuple(weights), biases=tuple(biases))


def _forward_cached(weights, biases, dropout_rate: float, inputs: np.ndarray,
                    train_mode: bool, rng):
    """Forward pass keeping the per-layer state needed for backprop."""
    a = inputs
    pre, post, masks = [], [inputs], []
    for layer in range(len(weights) - 1):
        z = a @ weights[layer] + biases[layer]
        h = np.maximum(z, 0.0)
        if train_mode and dropout_rate > 0.0:
            mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)  # inverted
            h = h * mask
        else:
            mask = None
        pre.append(z)
        post.append(h)
        masks.append(mask)
        a = h
    out = a @ weights[-1] + biases[-1]
    return out, (pre, post, masks)


def forward(params: NetworkParams, inputs: np.ndarray, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Batch forward pass; evaluation mode is deterministic."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != params.spec.input_dim:
        raise InputError(
            f"input width {inputs.shape[1]} != spec.input_dim {params.spec.input_dim}")
    if train_mode and params.spec.dropout_rate > 0.0 and rng is None:
        raise InputError("train-mode forward with dropout needs an rng")
    out, _ = _forward_cached(params.weights, params.biases, params.spec.dropout_rate,
                             inputs, train_mode, rng)
    return out


def _backprop(weights, cache, d_out: np.ndarray):
    """Gradients of the batch loss w.r.t. every weight matrix and bias."""
    pre, post, masks = cache
    n_layers = len(weights)
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    delta = d_out
    for layer in range(n_layers - 1, -1, -1):
        g_w[layer] = post[layer].T @ delta
        g_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ weights[layer].T
            if masks[layer - 1] is not None:
                delta = delta * masks[layer - 1]
            delta = delta * (pre[layer - 1] > 0.0)
    return g_w, g_b


def _step_loss_and_grads(weights, biases, spec: NetworkSpec, inputs: np.ndarray,
                         loss_adapter, batch_idx: np.ndarray, train_mode: bool, rng):
    out, cache = _forward_cached(weights, biases, spec.dropout_rate,
                                 inputs[batch_idx], train_mode, rng)
    data_loss, d_out = loss_adapter(out, batch_idx)
    g_w, g_b = _backprop(weights, cache, np.asarray(d_out, dtype=float))
    total = float(data_loss)
    if spec.l2_penalty > 0.0:
        total += spec.l2_penalty * sum(float((w * w).sum()) for w in weights)
        g_w = [g + 2.0 * spec.l2_penalty * w for g, w in zip(g_w, weights)]
    return total, g_w, g_b


def loss_and_gradients(params: NetworkParams, inputs: np.ndarray, loss_adapter,
                       batch_idx: np.ndarray | None = None, train_mode: bool = False,
                       rng: np.random.Generator | None = None):
    """One loss/gradient evaluation; the unit the trainer and tests share.

    Returns (total loss including the l2 term, weight grads, bias grads).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if batch_idx is None:
        batch_idx = np.arange(inputs.shape[0])
    return _step_loss_and_grads(params.weights, params.biases, params.spec,
                                inputs, loss_adapter, batch_idx, train_mode, rng)


def evaluate_loss(params: NetworkParams, inputs: np.ndarray, loss_adapter) -> float:
    """Full-sample training objective at fixed parameters: data loss + l2 term."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    out, _ = _forward_cached(params.weights, params.biases, 0.0, inputs, False, None)
    data_loss, _ = loss_adapter(out, np.arange(inputs.shape[0]))
    return float(data_loss) + params.spec.l2_penalty * params.weight_norm_sq()


def fit(spec: NetworkSpec, inputs: np.ndarray, loss_adapter) -> NetworkParams:
    """Train the network under a caller-supplied loss.

    `loss_adapter(outputs, batch_idx)` must return the scalar data loss
    for the mini-batch and the gradient of that loss with respect to
    `outputs` (same shape). Raises TrainingDivergedError on the first
    non-finite loss or gradient, carrying the epoch index.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != spec.input_dim:
        raise InputError(f"input width {inputs.shape[1]} != spec.input_dim {spec.input_dim}")
    n = inputs.shape[0]
    params = init_network(spec)
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    rng = np.random.default_rng(spec.seed)

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    step = 0

    trace: list[float] = []
    best_loss = np.inf
    best_epoch = -1
    best_w = [w.copy() for w in weights]
    best_b = [b.copy() for b in biases]
    prev_loss = np.inf
    flat_streak = 0

    for epoch in range(spec.max_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, spec.batch_size):
            batch_idx = order[start:start + spec.batch_size]
            loss, g_w, g_b = _step_loss_and_grads(
                weights, biases, spec, inputs, loss_adapter, batch_idx,
                train_mode=True, rng=rng)
            if not np.isfinite(loss) or any(not np.isfinite(g).all() for g in g_w + g_b):
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at epoch {epoch}", epoch=epoch)
            epoch_losses.append(loss)
            step += 1
            corr1 = 1.0 - ADAM_BETA1 ** step
            corr2 = 1.0 - ADAM_BETA2 ** step
            for arrs, grads, ms, vs in ((weights, g_w, m_w, v_w), (biases, g_b, m_b, v_b)):
                for a, g, m, v in zip(arrs, grads, ms, vs):
                    m *= ADAM_BETA1
                    m += (1.0 - ADAM_BETA1) * g
                    v *= ADAM_BETA2
                    v += (1.0 - ADAM_BETA2) * g * g
                    a -= ADAM_STEP * (m / corr1) / (np.sqrt(v / corr2) + ADAM_EPS)

        epoch_loss = float(np.mean(epoch_losses))
        trace.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_epoch = epoch
            best_w = [w.copy() for w in weights]
            best_b = [b.copy() for b in biases]
        if abs(epoch_loss - prev_loss) < spec.loss_tolerance:
            flat_streak += 1
            if flat_streak >= spec.patience:
                break
        else:
            flat_streak = 0
        prev_loss = epoch_loss

    return NetworkParams(spec=spec, weights=tuple(best_w), biases=tuple(best_b),
                         trace=tuple(trace), best_epoch=best_epoch)


def write_trace(params: NetworkParams, path) -> None:
    """Dump the per-epoch training losses as `epoch,loss` CSV."""
    with open(path, "w") as handle:
        handle.write("epoch,loss\n")
        for epoch, loss in enumerate(params.trace):
            handle.write(f"{epoch},{loss!r}\n")


def with_seed(spec: NetworkSpec, seed: int) -> NetworkSpec:
    return replace(spec, seed=int(seed))
