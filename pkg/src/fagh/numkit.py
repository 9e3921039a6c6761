"""Dense vector arithmetic and the rank-1 regularized Newton solve.

Parameter vectors are flat 1-D float64 arrays. All public operations
validate finiteness at the boundary and return new arrays; nothing here
mutates its inputs. Reductions use a fixed accumulation order so repeated
runs with the same seed are bit-identical regardless of BLAS threading.
"""

from dataclasses import dataclass

import numpy as np

#: Below this magnitude a pivot (|V[0]| or the Sherman-Morrison denominator)
#: is treated as zero and the solver falls back to the plain G/rho step.
PIVOT_EPS = 1e-12


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return ``x`` as a finite 1-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must have length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if dim is not None and arr.size != dim:
        raise ValueError(f"{name} has length {arr.size}, expected {dim}")
    return arr


def frozen(x) -> np.ndarray:
    """Copy ``x`` to a read-only float64 array (safe to share across threads)."""
    arr = np.array(x, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def vdot(a: np.ndarray, b: np.ndarray) -> float:
    # Fixed-order reduction; np.dot may hand large vectors to a threaded BLAS.
    return float(np.add.reduce(a * b))


def weighted_average(vectors: list, weights: list) -> np.ndarray:
    """Return sum_i weights[i] * vectors[i].

    Weights must be non-negative and sum to 1 within 1e-9. Accumulation is
    sequential in list order.
    """
    if len(vectors) == 0:
        raise ValueError("weighted_average of an empty list")
    if len(vectors) != len(weights):
        raise ValueError(f"{len(vectors)} vectors but {len(weights)} weights")
    vecs = [as_vector(v, name=f"vectors[{i}]") for i, v in enumerate(vectors)]
    dim = vecs[0].size
    for i, v in enumerate(vecs[1:], start=1):
        if v.size != dim:
            raise ValueError(f"vectors[{i}] has length {v.size}, expected {dim}")
    w = [float(x) for x in weights]
    if any(x < 0.0 for x in w):
        raise ValueError("weights must be non-negative")
    total = 0.0
    for x in w:
        total += x
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {total!r}, expected 1 within 1e-9")
    out = w[0] * vecs[0]
    for x, v in zip(w[1:], vecs[1:]):
        out += x * v
    return out


@dataclass(frozen=True)
class MomentState:
    """Exponential-moving-average state for the global gradient (m1) and the
    global Hessian first row (m2), with the step count used for bias
    correction."""

    m1: np.ndarray
    m2: np.ndarray
    t: int
    beta1: float
    beta2: float

    def __post_init__(self):
        m1 = frozen(as_vector(self.m1, name="m1"))
        m2 = frozen(as_vector(self.m2, dim=m1.size, name="m2"))
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m2", m2)
        if self.t < 0:
            raise ValueError("t must be non-negative")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if self.t == 0 and (np.any(self.m1 != 0.0) or np.any(self.m2 != 0.0)):
            raise ValueError("moments must be all-zero at t = 0")

    @property
    def dim(self) -> int:
        return self.m1.size

    @classmethod
    def zeros(cls, dim: int, beta1: float, beta2: float) -> "MomentState":
        z = np.zeros(dim)
        return cls(m1=z, m2=z, t=0, beta1=beta1, beta2=beta2)


def ema_update(state: MomentState, g: np.ndarray, v: np.ndarray) -> MomentState:
    """Advance both moving averages one step: m' = beta*m + (1-beta)*input."""
    g = as_vector(g, dim=state.dim, name="g")
    v = as_vector(v, dim=state.dim, name="v")
    m1 = state.beta1 * state.m1 + (1.0 - state.beta1) * g
    m2 = state.beta2 * state.m2 + (1.0 - state.beta2) * v
    return MomentState(m1=m1, m2=m2, t=state.t + 1,
                       beta1=state.beta1, beta2=state.beta2)


def bias_correct(state: MomentState) -> tuple[np.ndarray, np.ndarray]:
    """Return (G, V) = (m1 / (1 - beta1^t), m2 / (1 - beta2^t)).

    Undoes the zero-initialization bias of the moving averages. Requires at
    least one completed update (t >= 1).
    """
    if state.t < 1:
        raise ValueError("bias_correct requires t >= 1 (moments still zero)")
    g = state.m1 / (1.0 - state.beta1 ** state.t)
    v = state.m2 / (1.0 - state.beta2 ** state.t)
    return g, v


def rank1_regularized_solve(V: np.ndarray, G: np.ndarray, rho: float,
                            pivot_eps: float = PIVOT_EPS
                            ) -> tuple[np.ndarray, bool]:
    """Solve (V V^T / V[0] + rho I) x = G in O(d) without forming the matrix.

    The coefficient matrix is the rank-1 reconstruction Z V^T (Z = V / V[0])
    plus the regularizer, so the Sherman-Morrison identity gives the closed
    form

        x = G/rho - Z (V.G) / rho^2 / (1 + (V.Z)/rho).

    When |V[0]| < pivot_eps, or the denominator 1 + (V.Z)/rho is within
    pivot_eps of zero (V[0] < 0 can place an eigenvalue at -rho), the rank-1
    term is dropped and the plain regularized step G/rho is returned instead.

    Returns (x, used_fallback).
    """
    if not np.isfinite(rho) or rho <= 0.0:
        raise ValueError(f"rho must be a positive finite float, got {rho}")
    V = as_vector(V, name="V")
    G = as_vector(G, dim=V.size, name="G")
    v0 = V[0]
    if abs(v0) < pivot_eps:
        return G / rho, True
    Z = V / v0
    denom = 1.0 + vdot(V, Z) / rho
    if abs(denom) < pivot_eps:
        return G / rho, True
    x = G / rho - Z * (vdot(V, G) / (rho * rho) / denom)
    return x, False


def dense_solve_oracle(V: np.ndarray, G: np.ndarray, rho: float) -> np.ndarray:
    """Reference solve that materializes the d x d system. Test scale only."""
    if not np.isfinite(rho) or rho <= 0.0:
        raise ValueError(f"rho must be a positive finite float, got {rho}")
    V = as_vector(V, name="V")
    G = as_vector(G, dim=V.size, name="G")
    d = V.size
    if d > 2000:
        raise ValueError(f"dense oracle limited to d <= 2000, got {d}")
    if V[0] == 0.0:
        raise ValueError("dense oracle requires V[0] != 0")
    H = np.outer(V, V) / V[0] + rho * np.eye(d)
    try:
        return np.linalg.solve(H, G)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular system: {exc}") from exc
