"""SVD diagnostics for channel fusion.

The SVD is a one-sided (Hestenes) Jacobi iteration: column pairs of a working
copy are rotated until mutually orthogonal, the column norms are then the
singular values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OFF_TOL = 1e-12
MAX_SWEEPS = 60


@dataclass
class SvdFactors:
    U: np.ndarray  # T x r
    S: np.ndarray  # r, nonincreasing
    V: np.ndarray  # n x r

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _complete_basis(U: np.ndarray, keep: int) -> np.ndarray:
    """Replace columns ``keep:`` of U by an orthonormal completion of ``U[:, :keep]``."""
    rows, cols = U.shape
    basis = [U[:, j] for j in range(keep)]
    for e in np.eye(rows):
        if len(basis) == cols:
            break
        v = e.copy()
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
    return np.column_stack(basis)


def _jacobi_tall(A: np.ndarray) -> SvdFactors:
    M = A.copy()
    rows, cols = M.shape
    V = np.eye(cols)
    for _ in range(MAX_SWEEPS):
        off = 0.0
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = M[:, p] @ M[:, p]
                beta = M[:, q] @ M[:, q]
                gamma = M[:, p] @ M[:, q]
                if gamma == 0.0:
                    continue
                scale = np.sqrt(alpha * beta)
                off = max(off, abs(gamma) / scale)
                if abs(gamma) <= 1e-15 * scale:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                mp = M[:, p].copy()
                M[:, p] = c * mp - s * M[:, q]
                M[:, q] = s * mp + c * M[:, q]
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
        if off < OFF_TOL:
            break

    S = np.linalg.norm(M, axis=0)
    order = np.argsort(-S, kind="stable")
    S, M, V = S[order], M[:, order], V[:, order]
    tiny = max(S[0], 1.0) * 1e-14 * max(rows, cols) if S.size else 0.0
    rank = int(np.sum(S > tiny))
    U = np.zeros_like(M)
    U[:, :rank] = M[:, :rank] / S[:rank]
    S[rank:] = 0.0
    if rank < cols:
        U = _complete_basis(U, rank)
    return SvdFactors(U, S, V)


def _fix_signs(f: SvdFactors) -> SvdFactors:
    U, V = f.U.copy(), f.V.copy()
    for j in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, j]) > 1e-12)
        if nz.size and U[nz[0], j] < 0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]
    return SvdFactors(U, f.S, V)


def svd(A) -> SvdFactors:
    """Thin SVD, A = U diag(S) V', with r = min(rows, cols)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("svd expects a matrix")
    if not np.isfinite(A).all():
        raise ValueError("svd input contains non-finite entries")
    if A.shape[0] >= A.shape[1]:
        f = _jacobi_tall(A)
    else:
        g = _jacobi_tall(A.T)
        f = SvdFactors(g.V, g.S, g.U)
    return _fix_signs(f)


def _blocks(X, n: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not 1 <= n <= X.shape[1]:
        raise ValueError(f"need a T x C matrix and 1 <= n <= C, got {X.shape} and n={n}")
    return X[:, :n], X[:, X.shape[1] - n:]


def fuse_submatrices(X, n: int, a: float, b: float) -> np.ndarray:
    """a * (first n columns) + b * (last n columns)."""
    Xi, Xj = _blocks(X, n)
    return a * Xi + b * Xj


def linear_identity_residual(X, n: int, a: float, b: float) -> float:
    """Frobenius gap between a*U1S1V1' + b*U2S2V2' and the directly fused matrix."""
    Xi, Xj = _blocks(X, n)
    via_svd = a * svd(Xi).reconstruct() + b * svd(Xj).reconstruct()
    return float(np.linalg.norm(via_svd - fuse_submatrices(X, n, a, b)))


def aligned_singular_values(fi: SvdFactors, fj: SvdFactors) -> np.ndarray:
    """Singular values of the second block, signed to match the first block's vectors.

    A singular triplet is only defined up to a joint sign flip of (u, v); when
    X_j = c * X_i with c < 0 the vectors come out as (u, -v), so the scale is
    carried as a negative singular value.
    """
    su = np.where(np.sum(fi.U * fj.U, axis=0) >= 0, 1.0, -1.0)
    sv = np.where(np.sum(fi.V * fj.V, axis=0) >= 0, 1.0, -1.0)
    return fj.S * su * sv


def shared_pattern_error(X, n: int, a: float, b: float) -> float:
    """Relative error of the shared-basis approximation U1 (a S1 + b S2) V1'."""
    Xi, Xj = _blocks(X, n)
    fi, fj = svd(Xi), svd(Xj)
    approx = (fi.U * (a * fi.S + b * aligned_singular_values(fi, fj))) @ fi.V.T
    fused = a * Xi + b * Xj
    norm = np.linalg.norm(fused)
    if norm == 0.0:
        raise ZeroDivisionError("fused matrix is zero")
    return float(np.linalg.norm(approx - fused) / norm)


def pattern_mismatch(Xi, Xj) -> float:
    """How badly X_j is described by X_i's singular vectors, relative to ||X_j||."""
    fi, fj = svd(Xi), svd(Xj)
    approx = (fi.U * aligned_singular_values(fi, fj)) @ fi.V.T
    return float(np.linalg.norm(approx - Xj) / np.linalg.norm(Xj))


def orthonormal_basis(A) -> np.ndarray:
    f = svd(A)
    rank = int(np.sum(f.S > 1e-12 * max(f.S[0], 1.0)))
    return f.U[:, :rank]


def principal_angles(U1, U2) -> np.ndarray:
    """Principal angles (radians, ascending) between spans of orthonormal U1 and U2."""
    M = np.asarray(U1, dtype=np.float64).T @ np.asarray(U2, dtype=np.float64)
    cosines = np.clip(svd(M).S, 0.0, 1.0)
    return np.arccos(cosines)


def svd_report_rows(X, settings) -> list[dict]:
    """One row per (n, a, b): identity residual, shared-pattern error, top principal angles."""
    rows = []
    for n, a, b in settings:
        Xi, Xj = _blocks(X, n)
        angles = np.degrees(principal_angles(svd(Xi).U, svd(Xj).U))[:5]
        row = {
            "n": n,
            "a": a,
            "b": b,
            "linear_residual": linear_identity_residual(X, n, a, b),
            "shared_pattern_error": shared_pattern_error(X, n, a, b),
        }
        for i in range(5):
            row[f"angle{i + 1}_deg"] = float(angles[i]) if i < angles.size else ""
        rows.append(row)
    return rows
