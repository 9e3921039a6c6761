"""Differentiable classifiers with exact first- and second-order operators.

Two model families share one flat-parameter interface: multinomial logistic
regression ("mlr") and a small fully connected network with tanh hidden
layers ("mlp"). tanh keeps the cross-entropy loss twice differentiable
everywhere, which the rank-1 Hessian reconstruction requires.

Parameters are flattened layer by layer, each weight matrix row-major
[output unit, input feature], bias vector after its layer's weights.
Coordinate 0 of the flat vector is therefore the weight connecting input
feature 0 to unit 0 of the first layer; "Hessian first row" always means
the derivative of gradient component 0.

All operations are pure and deterministic: identical inputs give
bit-identical outputs.
"""

from dataclasses import dataclass

import numpy as np

from .numkit import as_vector

MLR = "mlr"
MLP = "mlp"

FD_STEP = 1e-5
_FD_MAX_DIM = 5000


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_sizes: tuple = ()
    include_bias: bool = True

    def __post_init__(self):
        if self.kind not in (MLR, MLP):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if self.kind == MLR and self.hidden_sizes:
            raise ValueError("mlr takes no hidden layers")
        if self.kind == MLP and not self.hidden_sizes:
            raise ValueError("mlp needs at least one hidden layer")

    @property
    def layer_shapes(self) -> list:
        """(out, in) shape of each weight matrix, first layer first."""
        dims = [self.input_dim, *self.hidden_sizes, self.num_classes]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def param_count(self) -> int:
        return sum(out * inp + (out if self.include_bias else 0)
                   for out, inp in self.layer_shapes)


@dataclass(frozen=True)
class Batch:
    """A design matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError(f"features must be (n, input_dim) with n >= 1, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        y = np.asarray(self.labels)
        if not np.issubdtype(y.dtype, np.integer):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} samples")
        if y.size and y.min() < 0:
            raise ValueError("labels must be non-negative")
        X = X.copy()
        X.flags.writeable = False
        y = y.copy()
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]


def _check_inputs(spec: ModelSpec, w, batch: Batch) -> np.ndarray:
    w = as_vector(w, dim=spec.param_count, name="w")
    if batch.features.shape[1] != spec.input_dim:
        raise ValueError(f"batch has {batch.features.shape[1]} features, "
                         f"spec wants {spec.input_dim}")
    if batch.labels.max() >= spec.num_classes:
        raise ValueError("label out of range for num_classes")
    return w


def unflatten(spec: ModelSpec, w: np.ndarray) -> list:
    """Split a flat parameter vector into per-layer (W, b) pairs."""
    mats = []
    pos = 0
    for out, inp in spec.layer_shapes:
        W = w[pos:pos + out * inp].reshape(out, inp)
        pos += out * inp
        if spec.include_bias:
            b = w[pos:pos + out]
            pos += out
        else:
            b = None
        mats.append((W, b))
    return mats


def flatten(spec: ModelSpec, mats: list) -> np.ndarray:
    parts = []
    for W, b in mats:
        parts.append(np.ravel(W))
        if b is not None:
            parts.append(np.ravel(b))
    return np.concatenate(parts)


def _forward(spec: ModelSpec, mats: list, X: np.ndarray):
    """Return (activations, logits); activations[0] is X, later entries tanh."""
    acts = [X]
    a = X
    for W, b in mats[:-1]:
        z = a @ W.T
        if b is not None:
            z += b
        a = np.tanh(z)
        acts.append(a)
    W, b = mats[-1]
    logits = a @ W.T
    if b is not None:
        logits = logits + b
    return acts, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss(spec: ModelSpec, w, batch: Batch) -> float:
    """Mean cross-entropy of the batch under softmax(logits)."""
    w = _check_inputs(spec, w, batch)
    _, logits = _forward(spec, unflatten(spec, w), batch.features)
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    ce = lse - logits[np.arange(batch.size), batch.labels]
    return float(ce.mean())


def _backward(spec: ModelSpec, mats: list, acts: list, delta: np.ndarray) -> list:
    """Backpropagate an output-layer residual into per-layer (gW, gb) pairs."""
    grads = [None] * len(mats)
    for layer in range(len(mats) - 1, -1, -1):
        W, b = mats[layer]
        gW = delta.T @ acts[layer]
        gb = delta.sum(axis=0) if b is not None else None
        grads[layer] = (gW, gb)
        if layer > 0:
            delta = (delta @ W) * (1.0 - acts[layer] ** 2)
    return grads


def gradient(spec: ModelSpec, w, batch: Batch) -> np.ndarray:
    """Exact gradient of :func:`loss` with respect to the flat parameters."""
    w = _check_inputs(spec, w, batch)
    mats = unflatten(spec, w)
    acts, logits = _forward(spec, mats, batch.features)
    delta = _softmax(logits)
    delta[np.arange(batch.size), batch.labels] -= 1.0
    delta /= batch.size
    return flatten(spec, _backward(spec, mats, acts, delta))


def hvp(spec: ModelSpec, w, batch: Batch, u) -> np.ndarray:
    """Exact Hessian-vector product H @ u without materializing H.

    Tangent propagation: run the forward and backward passes alongside their
    directional derivatives in direction ``u``. One call costs a small
    constant times a gradient evaluation.
    """
    w = _check_inputs(spec, w, batch)
    u = as_vector(u, dim=spec.param_count, name="u")
    mats = unflatten(spec, w)
    dirs = unflatten(spec, u)
    X = batch.features
    n = batch.size

    # forward pass with tangents; r_acts[l] = directional derivative of acts[l]
    acts, r_acts = [X], [np.zeros_like(X)]
    a, ra = X, r_acts[0]
    for (W, b), (RW, Rb) in zip(mats[:-1], dirs[:-1]):
        z = a @ W.T
        rz = ra @ W.T + a @ RW.T
        if b is not None:
            z += b
            rz += Rb
        a = np.tanh(z)
        ra = (1.0 - a ** 2) * rz
        acts.append(a)
        r_acts.append(ra)
    W, b = mats[-1]
    RW, Rb = dirs[-1]
    r_logits = ra @ W.T + a @ RW.T
    logits = a @ W.T
    if b is not None:
        logits = logits + b
        r_logits = r_logits + Rb

    p = _softmax(logits)
    rp = p * (r_logits - (p * r_logits).sum(axis=1, keepdims=True))
    delta = p.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    r_delta = rp / n

    # backward pass with tangents
    out = [None] * len(mats)
    for layer in range(len(mats) - 1, -1, -1):
        W, b = mats[layer]
        RW, _ = dirs[layer]
        hW = r_delta.T @ acts[layer] + delta.T @ r_acts[layer]
        hb = r_delta.sum(axis=0) if b is not None else None
        out[layer] = (hW, hb)
        if layer > 0:
            s = 1.0 - acts[layer] ** 2
            back = delta @ W
            r_back = r_delta @ W + delta @ RW
            r_delta = r_back * s + back * (-2.0 * acts[layer] * r_acts[layer])
            delta = back * s
    return flatten(spec, out)


def hessian_first_row(spec: ModelSpec, w, batch: Batch) -> np.ndarray:
    """Derivative of gradient component 0 w.r.t. every parameter.

    By symmetry of the Hessian this equals H @ e_0, so it is computed as a
    single Hessian-vector product.
    """
    w = _check_inputs(spec, w, batch)
    e0 = np.zeros(spec.param_count)
    e0[0] = 1.0
    return hvp(spec, w, batch, e0)


def accuracy(spec: ModelSpec, w, batch: Batch) -> float:
    """Fraction of argmax predictions matching labels (ties to lowest class)."""
    w = _check_inputs(spec, w, batch)
    _, logits = _forward(spec, unflatten(spec, w), batch.features)
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == batch.labels))


def init_params(spec: ModelSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Initial flat parameter vector: zeros for mlr, per-layer uniform
    +-(fan_in)^(-1/2) for mlp (weights and biases alike)."""
    if spec.kind == MLR:
        return np.zeros(spec.param_count)
    if rng is None:
        raise ValueError("mlp initialization needs a random generator")
    mats = []
    for out, inp in spec.layer_shapes:
        bound = 1.0 / np.sqrt(inp)
        W = rng.uniform(-bound, bound, size=(out, inp))
        b = rng.uniform(-bound, bound, size=out) if spec.include_bias else None
        mats.append((W, b))
    return flatten(spec, mats)


# --------------------------------------------------------------------------
# central finite-difference references (test scale only)


def finite_diff_gradient(spec: ModelSpec, w, batch: Batch,
                         step: float = FD_STEP) -> np.ndarray:
    w = _check_inputs(spec, w, batch)
    _check_fd_dim(spec)
    out = np.empty(spec.param_count)
    for k in range(spec.param_count):
        probe = np.zeros(spec.param_count)
        probe[k] = step
        out[k] = (loss(spec, w + probe, batch) - loss(spec, w - probe, batch)) / (2 * step)
    return out


def finite_diff_hessian_row(spec: ModelSpec, w, batch: Batch,
                            step: float = FD_STEP) -> np.ndarray:
    w = _check_inputs(spec, w, batch)
    _check_fd_dim(spec)
    out = np.empty(spec.param_count)
    for k in range(spec.param_count):
        probe = np.zeros(spec.param_count)
        probe[k] = step
        g_plus = gradient(spec, w + probe, batch)[0]
        g_minus = gradient(spec, w - probe, batch)[0]
        out[k] = (g_plus - g_minus) / (2 * step)
    return out


def finite_diff_oracles(spec: ModelSpec, w, batch: Batch,
                        step: float = FD_STEP):
    """Both central-difference references: (gradient, hessian first row)."""
    return (finite_diff_gradient(spec, w, batch, step),
            finite_diff_hessian_row(spec, w, batch, step))


def _check_fd_dim(spec: ModelSpec):
    if spec.param_count > _FD_MAX_DIM:
        raise ValueError(f"finite differences limited to d <= {_FD_MAX_DIM}, "
                         f"got {spec.param_count}")
