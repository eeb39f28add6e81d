import math

import numpy as np
import pytest

from trustkit import sensing
from trustkit.errors import DimensionError, EnumerationCapExceeded, ParameterError


def test_orthonormal_square_gram_is_identity():
    op = sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, 8, 8, seed=3)
    assert np.max(np.abs(op.matrix.T @ op.matrix - np.eye(8))) < 1e-10


def test_tall_orthonormal_gram_is_identity():
    op = sensing.sample_operator(sensing.TALL_ORTHONORMAL, 12, 5, seed=3)
    assert np.max(np.abs(op.matrix.T @ op.matrix - np.eye(5))) < 1e-10


def test_same_seed_bitwise_identical():
    a = sensing.sample_operator(sensing.GAUSSIAN_FAT, 16, 32, seed=99)
    b = sensing.sample_operator(sensing.GAUSSIAN_FAT, 16, 32, seed=99)
    assert a.matrix.tobytes() == b.matrix.tobytes()


def test_column_normalized_gaussian():
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 32, 64, seed=1, column_normalized=True)
    norms = np.linalg.norm(op.matrix, axis=0)
    assert np.max(np.abs(norms - 1.0)) < 1e-12


def test_kind_shape_validation():
    with pytest.raises(ParameterError):
        sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, 4, 8, seed=0)
    with pytest.raises(ParameterError):
        sensing.sample_operator(sensing.GAUSSIAN_FAT, 8, 8, seed=0)
    with pytest.raises(ParameterError):
        sensing.sample_operator(sensing.TALL_ORTHONORMAL, 4, 8, seed=0)


def test_apply_identity_and_zero():
    op = sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, 6, 6, seed=0)
    op.matrix[:] = np.eye(6)
    x = np.arange(6, dtype=float)
    assert np.array_equal(sensing.apply(op, x), x)
    assert np.array_equal(sensing.apply(op, np.zeros(6)), np.zeros(6))


def test_apply_matches_rowwise_dots():
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 9, 17, seed=5)
    rng = np.random.default_rng(2)
    x = rng.standard_normal(17)
    y = sensing.apply(op, x)
    # naive matvec oracle
    expected = np.array([float(sum(op.matrix[i, j] * x[j] for j in range(17))) for i in range(9)])
    assert np.allclose(y, expected, atol=1e-12)


def test_apply_dimension_error():
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 4, 8, seed=0)
    with pytest.raises(DimensionError):
        sensing.apply(op, np.zeros(7))


def test_apply_noise_deterministic_per_seed():
    x = np.ones(8)
    ys = []
    for _ in range(2):
        op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 4, 8, seed=11)
        ys.append(sensing.apply(op, x, noise_sigma=0.5))
    assert np.array_equal(ys[0], ys[1])
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 4, 8, seed=11)
    first = sensing.apply(op, x, noise_sigma=0.5)
    second = sensing.apply(op, x, noise_sigma=0.5)
    assert not np.array_equal(first, second)  # stream advances


def test_adjoint_identity_operator():
    op = sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, 5, 5, seed=0)
    op.matrix[:] = np.eye(5)
    r = np.arange(5, dtype=float)
    assert np.array_equal(sensing.adjoint(op, r), r)


@pytest.mark.parametrize("kind,m,n", [
    (sensing.ORTHONORMAL_SQUARE, 10, 10),
    (sensing.TALL_ORTHONORMAL, 14, 6),
    (sensing.GAUSSIAN_FAT, 8, 20),
    (sensing.FOURIER_MASKED, 10, 16),
])
def test_adjoint_inner_product_identity(kind, m, n):
    op = sensing.sample_operator(kind, m, n, seed=7)
    rng = np.random.default_rng(123)
    for _ in range(20):
        x = rng.standard_normal(n)
        r = rng.standard_normal(m)
        assert abs(sensing.apply(op, x) @ r - x @ sensing.adjoint(op, r)) < 1e-10


def test_fourier_adjoint_matches_dense_materialization():
    op = sensing.sample_operator(sensing.FOURIER_MASKED, 12, 24, seed=4)
    rng = np.random.default_rng(8)
    r = rng.standard_normal(op.m)
    # oracle: materialize the dense matrix independently from the mask
    t = np.arange(op.n)
    phases = -2.0 * np.pi * np.outer(op.mask, t) / op.n
    scale = math.sqrt(op.n / len(op.mask)) / math.sqrt(op.n)
    dense = np.empty((op.m, op.n))
    dense[0::2] = np.cos(phases) * scale
    dense[1::2] = np.sin(phases) * scale
    assert np.allclose(sensing.adjoint(op, r), dense.T @ r, atol=1e-12)


def test_rip_orthonormal_is_zero():
    op = sensing.sample_operator(sensing.ORTHONORMAL_SQUARE, 9, 9, seed=2)
    est = sensing.estimate_rip(op, k=2, method=sensing.EXACT_ENUMERATION)
    assert est.delta < 1e-10
    assert est.count == math.comb(9, 4)


def test_rip_exact_matches_eigen_oracle():
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 8, 12, seed=21)
    est = sensing.estimate_rip(op, k=2, method=sensing.EXACT_ENUMERATION)
    # independent oracle: per-support eigen-decomposition sweep
    from itertools import combinations

    worst = 0.0
    for s in combinations(range(12), 4):
        sub = op.matrix[:, list(s)]
        sing = np.linalg.svd(sub, compute_uv=False)
        worst = max(worst, float(np.max(np.abs(sing**2 - 1.0))))
    assert est.count == 495
    assert abs(est.delta - worst) < 1e-12


def test_rip_monte_carlo_is_lower_bound():
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 8, 12, seed=21)
    exact = sensing.estimate_rip(op, k=2, method=sensing.EXACT_ENUMERATION)
    mc = sensing.estimate_rip(op, k=2, method=sensing.MONTE_CARLO, budget=500, seed=3)
    assert mc.is_lower_bound
    assert mc.delta <= exact.delta + 1e-12


def test_rip_enumeration_cap_refusal():
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 40, 80, seed=0)
    with pytest.raises(EnumerationCapExceeded):
        sensing.estimate_rip(op, k=10, method=sensing.EXACT_ENUMERATION)


def test_rip_sandwich_attained():
    # every enumerated unit vector obeys the sandwich, with equality at the max
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 8, 10, seed=13)
    est = sensing.estimate_rip(op, k=1, method=sensing.EXACT_ENUMERATION)
    from itertools import combinations

    rng = np.random.default_rng(0)
    attained = 0.0
    for s in combinations(range(10), 2):
        sub = op.matrix[:, list(s)]
        for _ in range(50):
            z = rng.standard_normal(2)
            z /= np.linalg.norm(z)
            e = abs(np.linalg.norm(sub @ z) ** 2 - 1.0)
            assert e <= est.delta + 1e-9
            attained = max(attained, e)
        # eigenvector direction attains the per-support extreme
        w, v = np.linalg.eigh(sub.T @ sub)
        ext = v[:, np.argmax(np.abs(w - 1.0))]
        attained = max(attained, abs(np.linalg.norm(sub @ ext) ** 2 - 1.0))
    assert attained > est.delta - 1e-9


def test_ksparse_zero_k():
    sig = sensing.generate_ksparse(10, 0, seed=0)
    assert sig.k == 0
    assert np.array_equal(sig.to_dense(), np.zeros(10))


def test_ksparse_normalized():
    sig = sensing.generate_ksparse(50, 7, seed=4)
    assert abs(np.linalg.norm(sig.to_dense()) - 1.0) < 1e-12
    dense = sig.to_dense()
    off = np.setdiff1d(np.arange(50), sig.support)
    assert np.all(dense[off] == 0.0)


def test_ksparse_k_exceeds_n():
    with pytest.raises(ParameterError):
        sensing.generate_ksparse(4, 5, seed=0)


def test_ksparse_support_uniform():
    # statistical oracle: each index appears ~ draws*k/n times, within 3-sigma
    n, k, draws = 12, 3, 20_000
    counts = np.zeros(n)
    for seed in range(draws):
        counts[sensing.generate_ksparse(n, k, seed=seed).support] += 1
    p = k / n
    sigma = math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) < 3 * sigma)


def test_operator_roundtrip_dense(tmp_path):
    op = sensing.sample_operator(sensing.GAUSSIAN_FAT, 6, 14, seed=77, column_normalized=True)
    sensing.save_operator(op, tmp_path / "op.json")
    back = sensing.load_operator(tmp_path / "op.json")
    assert back.kind == op.kind and back.m == op.m and back.n == op.n
    assert back.column_normalized
    assert back.matrix.tobytes() == op.matrix.tobytes()


def test_operator_roundtrip_fourier(tmp_path):
    op = sensing.sample_operator(sensing.FOURIER_MASKED, 8, 16, seed=5)
    sensing.save_operator(op, tmp_path / "op.json")
    back = sensing.load_operator(tmp_path / "op.json")
    assert np.array_equal(back.mask, op.mask)
    assert np.allclose(back.matrix, op.matrix, atol=0)
