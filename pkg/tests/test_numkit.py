import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fagh import numkit
from fagh.numkit import (
    MomentState,
    bias_correct,
    dense_solve_oracle,
    ema_update,
    rank1_regularized_solve,
    weighted_average,
)


def solve_case(rng, d):
    """Random (V, G) with the pivot kept O(1) relative to ||V|| so both solve
    routes stay well conditioned down to rho = 1e-3."""
    V = rng.normal(size=d) / np.sqrt(d)
    V[0] = np.sign(V[0] or 1.0) * rng.uniform(0.3, 1.0)
    G = rng.normal(size=d)
    return V, G


# ---------------------------------------------------------------------------
# weighted_average


def test_weighted_average_identity():
    x = np.array([3.0, -1.0, 2.5])
    np.testing.assert_array_equal(weighted_average([x], [1.0]), x)


def test_weighted_average_symmetry():
    out = weighted_average([np.array([1.0, 0.0]), np.array([0.0, 1.0])], [0.5, 0.5])
    np.testing.assert_array_equal(out, np.array([0.5, 0.5]))


def test_weighted_average_matches_naive_accumulation():
    rng = np.random.default_rng(7)
    vectors = [rng.normal(size=7) for _ in range(5)]
    counts = [100, 300, 50, 250, 300]
    weights = [n / sum(counts) for n in counts]
    # independent oracle: elementwise accumulation, scalar by scalar
    expected = np.zeros(7)
    for w, v in zip(weights, vectors):
        for k in range(7):
            expected[k] += w * v[k]
    np.testing.assert_allclose(weighted_average(vectors, weights), expected,
                               rtol=0, atol=1e-12)


def test_weighted_average_rejects_bad_input():
    x = np.array([1.0, 2.0])
    with pytest.raises(ValueError):
        weighted_average([], [])
    with pytest.raises(ValueError):
        weighted_average([x, np.array([1.0, 2.0, 3.0])], [0.5, 0.5])
    with pytest.raises(ValueError):
        weighted_average([x, x], [0.7, 0.7])
    with pytest.raises(ValueError):
        weighted_average([x], [-1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_weighted_average_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 8))
    vectors = [rng.normal(size=5) for _ in range(m)]
    raw = rng.uniform(0.1, 1.0, size=m)
    weights = list(raw / raw.sum())
    base = weighted_average(vectors, weights)
    perm = rng.permutation(m)
    shuffled = weighted_average([vectors[i] for i in perm],
                                [weights[i] for i in perm])
    np.testing.assert_allclose(shuffled, base, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# moments


def test_ema_first_step_from_zero():
    state = MomentState.zeros(2, beta1=0.9, beta2=0.99)
    g = np.array([1.0, 1.0])
    v = np.array([2.0, 2.0])
    new = ema_update(state, g, v)
    np.testing.assert_allclose(new.m1, [0.1, 0.1], rtol=0, atol=1e-15)
    assert new.t == 1


def test_ema_zero_decay_is_no_smoothing():
    state = MomentState.zeros(3, beta1=0.0, beta2=0.0)
    g = np.array([1.0, -2.0, 3.0])
    v = np.array([0.5, 0.5, 0.5])
    new = ema_update(state, g, v)
    np.testing.assert_array_equal(new.m1, g)
    np.testing.assert_array_equal(new.m2, v)


def test_ema_two_step_recurrence():
    # direct evaluation: m = 0.5*(0.5*0 + 0.5*1) + 0.5*3 = 1.75
    state = MomentState.zeros(1, beta1=0.5, beta2=0.5)
    state = ema_update(state, np.array([1.0]), np.array([1.0]))
    state = ema_update(state, np.array([3.0]), np.array([3.0]))
    assert state.m1[0] == pytest.approx(1.75, abs=1e-15)
    assert state.t == 2


def test_ema_rejects_dimension_mismatch():
    state = MomentState.zeros(2, beta1=0.9, beta2=0.99)
    with pytest.raises(ValueError):
        ema_update(state, np.zeros(3), np.zeros(2))


def test_moment_state_rejects_nonzero_at_t0():
    with pytest.raises(ValueError):
        MomentState(m1=np.ones(2), m2=np.zeros(2), t=0, beta1=0.9, beta2=0.99)


def test_bias_correct_first_step():
    state = ema_update(MomentState.zeros(2, 0.9, 0.9),
                       np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    G, V = bias_correct(state)
    np.testing.assert_allclose(G, [1.0, 1.0], rtol=0, atol=1e-15)


def test_bias_correct_direct_value():
    state = MomentState(m1=np.array([1.75]), m2=np.array([1.75]), t=2,
                        beta1=0.5, beta2=0.5)
    G, _ = bias_correct(state)
    assert G[0] == pytest.approx(1.75 / 0.75, abs=1e-12)


def test_bias_correct_rejects_t0():
    with pytest.raises(ValueError):
        bias_correct(MomentState.zeros(2, 0.9, 0.99))


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.9, 0.99])
def test_constant_stream_is_fixed_point(beta):
    # corrected estimate of a constant stream recovers the input at every t
    g = np.array([0.3, -1.2, 4.0])
    v = np.array([2.0, 0.1, -0.7])
    state = MomentState.zeros(3, beta1=beta, beta2=beta)
    for _ in range(10):
        state = ema_update(state, g, v)
        G, V = bias_correct(state)
        np.testing.assert_allclose(G, g, rtol=1e-12, atol=0)
        np.testing.assert_allclose(V, v, rtol=1e-12, atol=0)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.0, max_value=0.999), st.integers(1, 30))
def test_constant_stream_fixed_point_property(beta, steps):
    g = np.array([1.5, -0.25])
    v = np.array([-3.0, 0.5])
    state = MomentState.zeros(2, beta1=beta, beta2=beta)
    for _ in range(steps):
        state = ema_update(state, g, v)
    G, V = bias_correct(state)
    np.testing.assert_allclose(G, g, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(V, v, rtol=1e-12, atol=1e-13)


# ---------------------------------------------------------------------------
# rank-1 regularized solve


def test_solve_basis_pivot_case():
    # (e1 e1^T + I) = diag(2, 1, 1), so the solve rescales only entry 0
    x, fallback = rank1_regularized_solve(np.array([1.0, 0.0, 0.0]),
                                          np.array([2.0, 4.0, 6.0]), rho=1.0)
    assert not fallback
    np.testing.assert_allclose(x, [1.0, 4.0, 6.0], rtol=0, atol=1e-14)


def test_solve_eigenvector_case():
    # V is an eigenvector of V V^T / V[0] with eigenvalue V.V / V[0] = 5
    V = np.array([1.0, 2.0])
    x, fallback = rank1_regularized_solve(V, V, rho=1.0)
    assert not fallback
    np.testing.assert_allclose(x, [1.0 / 6.0, 1.0 / 3.0], rtol=1e-14)


@pytest.mark.parametrize("d", [3, 10, 100])
@pytest.mark.parametrize("rho", [1e-3, 1e-1, 1.0])
def test_solve_matches_dense_oracle(d, rho):
    rng = np.random.default_rng(d * 1000 + int(-np.log10(rho)))
    for _ in range(20):
        V, G = solve_case(rng, d)
        x, fallback = rank1_regularized_solve(V, G, rho)
        assert not fallback
        ref = dense_solve_oracle(V, G, rho)
        assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


def test_solve_fallback_on_tiny_pivot():
    V = np.array([0.0, 1.0, 2.0])
    G = np.array([1.0, 1.0, 1.0])
    x, fallback = rank1_regularized_solve(V, G, rho=2.0)
    assert fallback
    np.testing.assert_array_equal(x, G / 2.0)


def test_solve_fallback_on_singular_denominator():
    # V[0] < 0 puts the rank-1 eigenvalue at exactly -rho
    V = np.array([-1.0, 1.0])
    rho = -(V @ V) / V[0]  # = 2
    x, fallback = rank1_regularized_solve(V, np.array([1.0, 1.0]), rho)
    assert fallback
    np.testing.assert_array_equal(x, np.array([0.5, 0.5]))


def test_solve_rejects_bad_input():
    V = np.array([1.0, 2.0])
    with pytest.raises(ValueError):
        rank1_regularized_solve(V, V, rho=0.0)
    with pytest.raises(ValueError):
        rank1_regularized_solve(V, V, rho=-1.0)
    with pytest.raises(ValueError):
        rank1_regularized_solve(np.array([1.0, np.nan]), V, rho=1.0)
    with pytest.raises(ValueError):
        rank1_regularized_solve(V, np.array([np.inf, 0.0]), rho=1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=100_000),
       st.sampled_from([2, 3, 7, 50, 400]),
       st.sampled_from([1e-3, 1e-1, 1.0, 10.0]))
def test_solve_residual_property(seed, d, rho):
    # residual check against V (V^T x) / V[0] + rho x = G, no oracle involved
    rng = np.random.default_rng(seed)
    V, G = solve_case(rng, d)
    x, fallback = rank1_regularized_solve(V, G, rho)
    assert not fallback
    residual = V * (V @ x / V[0]) + rho * x - G
    assert np.max(np.abs(residual)) <= 1e-8 * np.max(np.abs(G))


def test_solve_large_rho_bound():
    # ||x - G/rho|| <= ||G|| ||V||^2 / (|V[0]| rho^2), tightest for V[0] > 0
    rng = np.random.default_rng(42)
    rho = 1e6
    for d in (3, 20, 200):
        V, G = solve_case(rng, d)
        V[0] = abs(V[0])
        x, _ = rank1_regularized_solve(V, G, rho)
        lhs = np.linalg.norm(x - G / rho)
        bound = np.linalg.norm(G) * np.linalg.norm(V) ** 2 / (abs(V[0]) * rho**2)
        assert lhs <= bound * (1 + 1e-12)


def test_reconstruction_first_row_symmetry_rank():
    rng = np.random.default_rng(3)
    V, _ = solve_case(rng, 40)
    Z = V / V[0]
    H_a = np.outer(Z, V)
    np.testing.assert_array_equal(H_a[0], V)  # first row is V exactly
    asym = np.max(np.abs(H_a - H_a.T)) / np.max(np.abs(H_a))
    assert asym <= 1e-12
    s = np.linalg.svd(H_a, compute_uv=False)
    assert s[1] <= 1e-12 * s[0]  # numerical rank 1


# ---------------------------------------------------------------------------
# dense oracle


def test_oracle_basis_pivot_case():
    out = dense_solve_oracle(np.array([1.0, 0.0, 0.0]),
                             np.array([2.0, 4.0, 6.0]), rho=1.0)
    np.testing.assert_allclose(out, [1.0, 4.0, 6.0], rtol=1e-14)


def test_oracle_large_rho_limit():
    rng = np.random.default_rng(0)
    V, G = solve_case(rng, 10)
    rho = 1e9
    out = dense_solve_oracle(V, G, rho)
    np.testing.assert_allclose(out, G / rho, rtol=1e-6)


def test_oracle_scalar_case():
    out = dense_solve_oracle(np.array([2.0]), np.array([3.0]), rho=1.0)
    assert out[0] == pytest.approx(1.0, abs=1e-15)


def test_oracle_rejects_oversize_and_zero_pivot():
    with pytest.raises(ValueError):
        dense_solve_oracle(np.ones(2001), np.ones(2001), rho=1.0)
    with pytest.raises(ValueError):
        dense_solve_oracle(np.array([0.0, 1.0]), np.array([1.0, 1.0]), rho=1.0)
