import math

import numpy as np
import pytest

from hmbitcn.svd import (
    fuse_submatrices,
    linear_identity_residual,
    orthonormal_basis,
    pattern_mismatch,
    principal_angles,
    shared_pattern_error,
    svd,
    svd_report_rows,
)


def check_factors(A, f, tol=1e-10):
    r = min(A.shape)
    assert f.U.shape == (A.shape[0], r) and f.V.shape == (A.shape[1], r) and f.S.shape == (r,)
    np.testing.assert_allclose(f.U.T @ f.U, np.eye(r), atol=tol)
    np.testing.assert_allclose(f.V.T @ f.V, np.eye(r), atol=tol)
    assert np.linalg.norm(f.reconstruct() - A) / max(1.0, np.linalg.norm(A)) <= tol
    assert np.all(np.diff(f.S) <= 0) and np.all(f.S >= 0)


def test_identity_singular_values():
    f = svd(np.eye(3))
    np.testing.assert_allclose(f.S, [1, 1, 1], atol=1e-15)


def test_rank_one_outer_product():
    u = np.array([2.0, 0.0, 0.0, 0.0])  # |u| = 2
    v = np.array([0.0, 3.0, 0.0])  # |v| = 3
    A = np.outer(u, v)
    f = svd(A)
    np.testing.assert_allclose(f.S, [6, 0, 0], atol=1e-14)
    check_factors(A, f)


@pytest.mark.parametrize("rows", [2, 3, 5, 8, 13, 21, 32])
@pytest.mark.parametrize("cols", [1, 2, 4, 8])
def test_factor_invariants_random(rows, cols):
    A = np.random.default_rng(rows * 100 + cols).normal(size=(rows, cols))
    f = svd(A)
    check_factors(A, f)
    # independent reference for the values only
    np.testing.assert_allclose(f.S, np.linalg.svd(A, compute_uv=False), atol=1e-12)


def test_sign_convention():
    f = svd(np.random.default_rng(4).normal(size=(6, 3)))
    for j in range(3):
        first = f.U[np.flatnonzero(np.abs(f.U[:, j]) > 1e-12)[0], j]
        assert first > 0


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


def test_fuse_submatrices():
    X = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(fuse_submatrices(X, 1, 2.0, -1.0), 2 * X[:, :1] - X[:, 3:])


def test_linear_identity_residual_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        T = int(rng.integers(2, 20))
        C = int(rng.integers(2, 10))
        n = int(rng.integers(1, C // 2 + 1))
        X = rng.normal(size=(T, C)) * rng.uniform(0.1, 10)
        a, b = rng.normal(size=2)
        bound = 1e-9 * (np.linalg.norm(X[:, :n]) + np.linalg.norm(X[:, -n:]))
        assert linear_identity_residual(X, n, a, b) <= bound


def test_residual_with_zero_a_is_block_reconstruction_error():
    X = np.random.default_rng(1).normal(size=(16, 4))
    recon_err = np.linalg.norm(svd(X[:, 2:]).reconstruct() - X[:, 2:])
    assert linear_identity_residual(X, 2, 0.0, 1.5) == pytest.approx(1.5 * recon_err, abs=1e-14)


@pytest.mark.parametrize("c", [1.0, 2.0, -0.5])
@pytest.mark.parametrize("a, b", [(1.0, 0.5), (1.0, -1.5), (0.3, 2.0)])
def test_shared_pattern_exact_for_scaled_copies(c, a, b):
    Xi = np.random.default_rng(2).normal(size=(64, 4))
    X = np.hstack([Xi, c * Xi])
    assert shared_pattern_error(X, 4, a, b) <= 1e-9


def test_shared_pattern_large_for_independent_blocks():
    errs = [shared_pattern_error(np.random.default_rng(s).normal(size=(64, 8)), 4, 1.0, -1.0) for s in range(100)]
    assert min(errs) > 0.5


def test_pattern_mismatch_scale_invariant():
    rng = np.random.default_rng(3)
    Xi, Xj = rng.normal(size=(2, 32, 3))
    assert pattern_mismatch(Xi, 3 * Xj) == pytest.approx(pattern_mismatch(Xi, Xj), rel=1e-10)
    # with a = 0 the fused-matrix error reduces to the same quantity
    X, X3 = np.hstack([Xi, Xj]), np.hstack([Xi, 3 * Xj])
    assert shared_pattern_error(X3, 3, 0.0, 1.0) == pytest.approx(shared_pattern_error(X, 3, 0.0, 1.0), rel=1e-10)


def test_principal_angles_trivial_cases():
    U = orthonormal_basis(np.random.default_rng(5).normal(size=(8, 3)))
    np.testing.assert_allclose(principal_angles(U, U), 0.0, atol=1e-7)
    E = np.eye(6)
    np.testing.assert_allclose(principal_angles(E[:, :2], E[:, 2:4]), math.pi / 2, atol=1e-15)


def brute_force_angles(U1, U2, grid=1200):
    """Largest cosine over unit vectors in both planes, then the min-max for the second angle."""
    th = np.linspace(0, math.pi, grid, endpoint=False)
    circle = np.stack([np.cos(th), np.sin(th)])
    P = U1 @ circle  # 8 x grid, unit vectors in span(U1)
    Q = U2 @ circle
    cos = np.abs(P.T @ Q)  # grid x grid
    best_per_u = cos.max(axis=1)
    return np.sort(np.arccos(np.clip([best_per_u.max(), best_per_u.min()], 0, 1)))


def test_principal_angles_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(5):
        U1 = orthonormal_basis(rng.normal(size=(8, 2)))
        U2 = orthonormal_basis(rng.normal(size=(8, 2)))
        np.testing.assert_allclose(principal_angles(U1, U2), brute_force_angles(U1, U2), atol=1e-3)


def test_principal_angles_permutation_invariant():
    rng = np.random.default_rng(7)
    A, B = rng.normal(size=(2, 10, 3))
    base = principal_angles(orthonormal_basis(A), orthonormal_basis(B))
    perm = principal_angles(orthonormal_basis(A[:, [2, 0, 1]]), orthonormal_basis(B[:, [1, 2, 0]]))
    np.testing.assert_allclose(base, perm, atol=1e-10)


def test_report_rows():
    X = np.random.default_rng(8).normal(size=(20, 6))
    rows = svd_report_rows(X, [(1, 1.0, -1.0), (3, 1.0, 1.0)])
    assert rows[0]["angle1_deg"] != "" and rows[0]["angle2_deg"] == ""
    assert all(rows[1][f"angle{i}_deg"] != "" for i in range(1, 4))
    assert rows[1]["linear_residual"] < 1e-9
