"""Built-in verification suites.

These re-run the dual-route checks (closed-form solve vs dense solve,
analytic derivatives vs finite differences, rank-1 reconstruction vs the
true Hessian, partition bookkeeping) without needing a test harness, so a
deployed build can verify itself. Each suite returns (passed, failed)
counts; they call the library through module attributes, which also makes
them sensitive to injected faults.
"""

import numpy as np

from . import data as datamod
from . import models
from . import numkit


def random_solve_case(rng, d):
    """(V, G) with the pivot kept O(1) relative to ||V|| = O(1), so the
    closed form and the dense solve agree to full double precision."""
    V = rng.normal(size=d) / np.sqrt(d)
    V[0] = np.sign(V[0] or 1.0) * rng.uniform(0.3, 1.0)
    G = rng.normal(size=d)
    return V, G


def suite_dense_solve(cases_per_cell: int = 30) -> tuple[int, int]:
    """Closed-form rank-1 solve against the dense oracle."""
    passed = failed = 0
    rng = np.random.default_rng(2024)
    for d in (3, 10, 100):
        for rho in (1e-3, 1e-1, 1.0):
            for _ in range(cases_per_cell):
                V, G = random_solve_case(rng, d)
                x, fell_back = numkit.rank1_regularized_solve(V, G, rho)
                ref = numkit.dense_solve_oracle(V, G, rho)
                ok = (not fell_back
                      and np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref))
                passed, failed = passed + ok, failed + (not ok)
    return passed, failed


def suite_finite_differences(cases: int = 6) -> tuple[int, int]:
    """Analytic gradient and Hessian first row against central differences."""
    passed = failed = 0
    rng = np.random.default_rng(77)
    for i in range(cases):
        kind = "mlr" if i % 2 == 0 else "mlp"
        hidden = (int(rng.integers(2, 5)),) if kind == "mlp" else ()
        spec = models.ModelSpec(kind, input_dim=int(rng.integers(2, 5)),
                                num_classes=int(rng.integers(2, 4)),
                                hidden_sizes=hidden)
        w = rng.normal(scale=0.4, size=spec.param_count)
        batch = models.Batch(features=rng.normal(size=(12, spec.input_dim)),
                             labels=rng.integers(0, spec.num_classes, size=12))
        g_ok = np.max(np.abs(models.gradient(spec, w, batch)
                             - models.finite_diff_gradient(spec, w, batch))) <= 1e-6
        v_ok = np.max(np.abs(models.hessian_first_row(spec, w, batch)
                             - models.finite_diff_hessian_row(spec, w, batch))) <= 1e-4
        for ok in (g_ok, v_ok):
            passed, failed = passed + ok, failed + (not ok)
    return passed, failed


def suite_rank1_exactness(cases: int = 20) -> tuple[int, int]:
    """Reconstruction v v^T / v[0] against the finite-difference Hessian on
    the single-sample two-class family where it is exact."""
    passed = failed = 0
    rng = np.random.default_rng(99)
    for _ in range(cases):
        D = int(rng.integers(2, 10))
        spec = models.ModelSpec("mlr", input_dim=D, num_classes=2,
                                include_bias=False)
        x = rng.normal(size=D)
        x[0] = np.sign(x[0] or 1.0) * rng.uniform(0.5, 1.5)
        batch = models.Batch(features=[x], labels=[int(rng.integers(0, 2))])
        w = rng.normal(scale=0.3, size=spec.param_count)
        v = models.hessian_first_row(spec, w, batch)
        if abs(v[0]) <= 1e-6:
            continue
        H_a = np.outer(v, v) / v[0]
        d = spec.param_count
        H_fd = np.empty((d, d))
        for k in range(d):
            probe = np.zeros(d)
            probe[k] = 1e-5
            H_fd[k] = (models.gradient(spec, w + probe, batch)
                       - models.gradient(spec, w - probe, batch)) / 2e-5
        ok = np.max(np.abs(H_a - H_fd)) <= 1e-4
        passed, failed = passed + ok, failed + (not ok)
    return passed, failed


def suite_partition_conservation(seeds: int = 5) -> tuple[int, int]:
    """Exact conservation, disjointness, and determinism of both partitioners."""
    passed = failed = 0
    ds = datamod.synth_classification(seed=11, n=500, input_dim=3,
                                      num_classes=5, separation=1.0)
    for seed in range(seeds):
        dirich = datamod.dirichlet_partition(ds, K=8, alpha=0.2, seed=seed)
        again = datamod.dirichlet_partition(ds, K=8, alpha=0.2, seed=seed)
        merged = np.concatenate(dirich.assignments)
        checks = [
            int(dirich.counts.sum()) == ds.size,
            np.unique(merged).size == merged.size,
            all(np.array_equal(a, b)
                for a, b in zip(dirich.assignments, again.assignments)),
        ]
        shards = datamod.shard_partition(ds, num_shards=10, shards_per_client=2,
                                         seed=seed)
        checks.append(int(shards.counts.sum()) == ds.size - ds.size % 10)
        checks.append(all(np.array_equal(a, b) for a, b in zip(
            shards.assignments,
            datamod.shard_partition(ds, num_shards=10, shards_per_client=2,
                                    seed=seed).assignments)))
        for ok in checks:
            passed, failed = passed + ok, failed + (not ok)
    return passed, failed


SUITES = {
    "dense-solve": suite_dense_solve,
    "finite-differences": suite_finite_differences,
    "rank1-exactness": suite_rank1_exactness,
    "partition-conservation": suite_partition_conservation,
}


def run_all(report=print) -> bool:
    """Run every suite, report one line each, return True iff all pass."""
    all_ok = True
    for name, suite in SUITES.items():
        passed, failed = suite()
        report(f"{name}: {passed} passed, {failed} failed")
        if failed or passed == 0:
            all_ok = False
    return all_ok
