import numpy as np
import pytest

from trustkit import sensing, solvers
from trustkit.errors import ParameterError, SingularMatrixError


def _identity_op(n):
    op = sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, n, n, seed=0)
    op.matrix[:] = np.eye(n)
    return op


def _gaussian(m, n, seed):
    return sensing.sample_operator(sensing.GAUSSIAN_FAT, m, n, seed=seed)


# ---- OMP --------------------------------------------------------------------


def test_omp_identity_dictionary():
    op = _identity_op(10)
    y = np.zeros(10)
    y[[2, 5, 7]] = [1.0, -2.0, 0.5]
    res = solvers.omp(op, y, solvers.SolverConfig(sparsity_budget=3))
    assert res.iterations_used == 3
    assert np.array_equal(res.support, [2, 5, 7])
    assert np.allclose(res.x_hat, y, atol=1e-12)
    assert res.residual_norm_history[-1] < 1e-12
    assert res.converged


def test_omp_zero_measurement():
    op = _identity_op(6)
    res = solvers.omp(op, np.zeros(6))
    assert res.iterations_used == 0
    assert res.converged
    assert np.array_equal(res.x_hat, np.zeros(6))


def test_omp_residuals_strictly_decrease():
    op = _gaussian(20, 40, seed=4)
    rng = np.random.default_rng(0)
    x = np.zeros(40)
    x[rng.choice(40, 4, replace=False)] = rng.standard_normal(4)
    res = solvers.omp(op, op.matrix @ x, solvers.SolverConfig(sparsity_budget=4))
    hist = res.residual_norm_history
    assert all(hist[i + 1] < hist[i] for i in range(len(hist) - 1))


def test_omp_never_reselects_atom():
    op = _gaussian(16, 32, seed=9)
    rng = np.random.default_rng(3)
    y = rng.standard_normal(16)
    res = solvers.omp(op, y, solvers.SolverConfig(sparsity_budget=10))
    assert len(set(res.support.tolist())) == len(res.support)


def test_omp_recovery_rate_and_values():
    # oracle: direct least squares on the true support
    n, m, k, trials = 128, 64, 5, 200
    exact = 0
    for seed in range(trials):
        op = _gaussian(m, n, seed=seed)
        rng = np.random.default_rng(10_000 + seed)
        support = np.sort(rng.choice(n, k, replace=False))
        x = np.zeros(n)
        x[support] = rng.standard_normal(k) + np.sign(rng.standard_normal(k))
        y = op.matrix @ x
        res = solvers.omp(op, y, solvers.SolverConfig(sparsity_budget=k))
        if np.array_equal(res.support, support):
            exact += 1
            oracle, *_ = np.linalg.lstsq(op.matrix[:, support], y, rcond=None)
            assert np.max(np.abs(res.x_hat[support] - oracle)) < 1e-8
    assert exact >= 0.95 * trials


# ---- shrink -----------------------------------------------------------------


def test_shrink_properties():
    v = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.array_equal(solvers.shrink(v, 0.0), v)
    assert np.array_equal(solvers.shrink(-v, 1.0), -solvers.shrink(v, 1.0))
    assert np.array_equal(solvers.shrink(v, 1.0), [-1.0, 0.0, 0.0, 0.0, 1.0])


# ---- ISTA / FISTA -----------------------------------------------------------


def test_ista_scalar_soft_threshold():
    # A = [1], y = 3, lambda = 1: minimizer of 0.5(x-3)^2 + |x| is x = 2
    op = _identity_op(1)
    res = solvers.ista(op, np.array([3.0]),
                       solvers.SolverConfig(max_iterations=500, lam=1.0,
                                            residual_tolerance=0.0))
    assert abs(res.x_hat[0] - 2.0) < 1e-10


def test_fista_scalar_soft_threshold():
    op = _identity_op(1)
    res = solvers.fista(op, np.array([3.0]),
                        solvers.SolverConfig(max_iterations=500, lam=1.0,
                                             residual_tolerance=0.0))
    assert abs(res.x_hat[0] - 2.0) < 1e-10


def test_lambda_zero_orthonormal_gives_least_squares():
    op = sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, 12, 12, seed=5)
    rng = np.random.default_rng(1)
    y = rng.standard_normal(12)
    res = solvers.ista(op, y, solvers.SolverConfig(max_iterations=2000, lam=0.0,
                                                   residual_tolerance=0.0))
    assert np.max(np.abs(res.x_hat - op.matrix.T @ y)) < 1e-10


def test_negative_lambda_rejected():
    with pytest.raises(ParameterError):
        solvers.SolverConfig(lam=-0.1)


def test_ista_objective_nonincreasing():
    op = _gaussian(16, 32, seed=2)
    rng = np.random.default_rng(7)
    y = rng.standard_normal(16)
    res = solvers.ista(op, y, solvers.SolverConfig(max_iterations=300,
                                                   residual_tolerance=0.0))
    obj = res.objective_history
    assert all(obj[i + 1] <= obj[i] + 1e-12 for i in range(len(obj) - 1))


def test_fista_beats_ista_at_same_iteration_count():
    wins = 0
    seeds = range(50)
    for seed in seeds:
        op = _gaussian(32, 64, seed=100 + seed)
        rng = np.random.default_rng(seed)
        y = rng.standard_normal(32)
        cfg = solvers.SolverConfig(max_iterations=150, residual_tolerance=0.0)
        fi = solvers.fista(op, y, cfg)
        it = solvers.ista(op, y, cfg)
        if fi.objective_history[-1] <= it.objective_history[-1]:
            wins += 1
    assert wins > len(list(seeds)) // 2


def test_fista_reaches_long_run_optimum_faster():
    # oracle: objective after a long ISTA run
    op = _gaussian(32, 64, seed=77)
    rng = np.random.default_rng(42)
    y = rng.standard_normal(32)
    long_cfg = solvers.SolverConfig(max_iterations=20_000, residual_tolerance=0.0)
    long_run = solvers.ista(op, y, long_cfg)
    target = long_run.objective_history[-1] + 1e-6
    ista_hit = next(i for i, f in enumerate(long_run.objective_history) if f <= target) + 1
    fi = solvers.fista(op, y, solvers.SolverConfig(max_iterations=ista_hit,
                                                   residual_tolerance=0.0))
    fista_hit = next(
        (i + 1 for i, f in enumerate(fi.objective_history) if f <= target), None
    )
    assert fista_hit is not None and fista_hit < ista_hit


def test_power_iteration_matches_svd():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((20, 35))
    lip = solvers.lipschitz_constant(a)
    smax = np.linalg.svd(a, compute_uv=False)[0]
    assert abs(lip - smax**2) < 1e-8 * smax**2


# ---- operator estimation -----------------------------------------------------


def test_estimate_operator_exactly_determined():
    rng = np.random.default_rng(11)
    n, m = 12, 8
    true = rng.standard_normal((m, n))
    pairs = []
    for _ in range(3 * n):
        x = rng.standard_normal(n)
        pairs.append((x, true @ x))
    est = solvers.estimate_operator(pairs, ridge=0.0)
    assert est.kind == sensing.DENSE
    rel = np.linalg.norm(est.matrix - true) / np.linalg.norm(true)
    assert rel < 1e-8


def test_estimate_operator_single_pair_minimum_norm():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(6)
    y = rng.standard_normal(4)
    # closed-form rank-1 oracle: y x^T / (|x|^2 + ridge)
    for ridge in (1e-2, 1e-4, 1e-6):
        est = solvers.estimate_operator([(x, y)], ridge=ridge)
        oracle = np.outer(y, x) / (x @ x + ridge)
        assert np.max(np.abs(est.matrix - oracle)) < 1e-10
    est = solvers.estimate_operator([(x, y)], ridge=1e-12)
    assert np.max(np.abs(est.matrix @ x - y)) < 1e-9  # consistent as ridge -> 0


def test_estimate_operator_noisy_beats_truth_on_training_residual():
    rng = np.random.default_rng(9)
    n, m = 10, 6
    true = rng.standard_normal((m, n))
    pairs = []
    for _ in range(40):
        x = rng.standard_normal(n)
        pairs.append((x, true @ x + 0.1 * rng.standard_normal(m)))
    est = solvers.estimate_operator(pairs, ridge=0.0)

    def residual(a):
        return sum(float(np.sum((a @ x - y) ** 2)) for x, y in pairs)

    assert residual(est.matrix) <= residual(true) + 1e-12


def test_estimate_operator_singular_without_ridge():
    x = np.ones(5)
    y = np.ones(3)
    with pytest.raises(SingularMatrixError):
        solvers.estimate_operator([(x, y)], ridge=0.0)


def test_result_export(tmp_path):
    op = _identity_op(4)
    y = np.array([0.0, 1.0, 0.0, 0.0])
    res = solvers.omp(op, y, solvers.SolverConfig(sparsity_budget=1))
    res.save(tmp_path / "result.json")
    import json

    meta = json.loads((tmp_path / "result.json").read_text())
    assert meta["support"] == [1]
    blob = np.frombuffer((tmp_path / "result.x.bin").read_bytes(), dtype="<f8")
    assert np.array_equal(blob, res.x_hat)
