"""Rank-l spectral preconditioners built from CUR factors.

Both forms act as the identity on the orthogonal complement of a rank-l
subspace and rescale that subspace so the leading singular values of
``A_mu P^-1`` collapse onto a common target level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import RankDeficientError
from .matrix import EPS, chol_gram, density, small_svd, thin_qr, to_dense, tri_solve

IMPLICIT_DENSITY = 0.10
# implicit V = R^T T_R^-1 V_M loses about eps*cond(T_R) of orthogonality; the
# leak is amplified by sigma_1/level in A P^-1, so cap that product
IMPLICIT_LEAK = 1e-8


class IdentityPreconditioner:
    """Rank-0 preconditioner, used before any CUR factor exists."""

    rank = 0
    level = float("nan")
    dense_storage = 0

    def apply_inv(self, v):
        return np.array(v, dtype=float, copy=True)

    apply_inv_transpose = apply_inv
    apply = apply_inv

    def diagnostics(self):
        return {"kind": "identity", "rank": 0}


@dataclass(eq=False)
class SvdPreconditioner:
    """``P^-1 = level * V diag(1/sigma_reg) V^T + (I - V V^T)``.

    ``V`` is either stored explicitly (``n x l``) or implicitly as
    ``R^T T_R^-1 V_M`` so that a sparse ``R`` is never densified.

    Attributes
    ----------
    sigma : ndarray
        Singular values of the CUR approximation (nonincreasing).
    sigma_reg : ndarray
        ``sqrt(sigma**2 + mu**2)``.
    level : float
        Target level the leading directions are mapped to.
    """

    sigma: np.ndarray
    sigma_reg: np.ndarray
    level: float
    mu: float
    V: np.ndarray = None
    R: object = None
    T_R: np.ndarray = None
    V_M: np.ndarray = None

    @property
    def rank(self):
        return self.sigma.size

    @property
    def implicit(self):
        return self.V is None

    @property
    def dense_storage(self):
        """Number of floats held in dense ``n x l`` factors."""
        return 0 if self.implicit else self.V.size

    def _Vt(self, v):
        if self.V is not None:
            return self.V.T @ v
        return self.V_M.T @ tri_solve(self.T_R, np.asarray(self.R @ v), trans=True)

    def _V(self, z):
        if self.V is not None:
            return self.V @ z
        return np.asarray(self.R.T @ tri_solve(self.T_R, self.V_M @ z))

    def _scale(self, v, d):
        v = np.asarray(v, dtype=float)
        z = self._Vt(v)
        z = (d - 1.0)[:, None] * z if z.ndim == 2 else (d - 1.0) * z
        return v + self._V(z)

    def apply_inv(self, v):
        return self._scale(v, self.level / self.sigma_reg)

    # symmetric operator
    apply_inv_transpose = apply_inv

    def apply(self, v):
        return self._scale(v, self.sigma_reg / self.level)

    def basis(self):
        """Dense ``V`` (materializes the implicit form; tests only)."""
        if self.V is not None:
            return self.V
        return self._V(np.eye(self.rank))

    def diagnostics(self):
        return {"kind": "svd", "rank": int(self.rank), "level": float(self.level),
                "sigma_reg": [float(s) for s in self.sigma_reg], "mu": float(self.mu),
                "implicit": bool(self.implicit)}


@dataclass(eq=False)
class SvdFreePreconditioner:
    """``P^-1 = level * Q_R M^-1 Q_R^T + (I - Q_R Q_R^T)`` with
    ``M^-1 = T_R^-T A(I,J) T_C^-1`` applied by two triangular solves."""

    Q_R: np.ndarray
    T_R: np.ndarray
    T_C: np.ndarray
    W: np.ndarray
    level: float
    core: object = None

    @property
    def rank(self):
        return self.W.shape[0]

    @property
    def dense_storage(self):
        return self.Q_R.size

    def _minv(self, z):
        return tri_solve(self.T_R, self.W @ tri_solve(self.T_C, z), trans=True)

    def _minv_t(self, z):
        return tri_solve(self.T_C, self.W.T @ tri_solve(self.T_R, z), trans=True)

    def _m(self, z):
        return self.T_C @ self.core.solve(self.T_R.T @ z)

    def _mix(self, v, inner, scale):
        v = np.asarray(v, dtype=float)
        q = self.Q_R.T @ v
        return v - self.Q_R @ q + scale * (self.Q_R @ inner(q))

    def apply_inv(self, v):
        return self._mix(v, self._minv, self.level)

    def apply_inv_transpose(self, v):
        return self._mix(v, self._minv_t, self.level)

    def apply(self, v):
        if self.core is None:
            raise ValueError("forward application needs the intersection factorization")
        return self._mix(v, self._m, 1.0 / self.level)

    def diagnostics(self):
        return {"kind": "svd-free", "rank": int(self.rank), "level": float(self.level)}


def implicit_is_stable(T_R, top, level):
    """Whether ``R^T T_R^-1`` is orthonormal enough to resolve ``level`` against ``top``."""
    cond = np.linalg.cond(T_R)
    return bool(np.isfinite(cond) and EPS * cond * top / level <= IMPLICIT_LEAK)


def build_svd_precond(factors, mu, Q_R=None, T_R=None, T_C=None, implicit=None,
                      chol_method="householder"):
    """SVD-based preconditioner from CUR factors ``(C, core, R)``.

    ``T_C`` and ``(Q_R, T_R)`` may be supplied from incremental updates.
    ``implicit=None`` picks the implicit basis when ``R`` is sparse with
    density below 10% and ``T_R`` is well enough conditioned for the
    implicit basis to resolve the target level; otherwise ``V`` is explicit.
    """
    C, core, R = factors.C, factors.core, factors.R
    if T_C is None:
        T_C = chol_gram(C, method=chol_method)
    if T_R is None:
        Q_R, T_R = thin_qr(to_dense(R).T)
    M = T_C @ core.solve(T_R.T)
    _, s, V_M = small_svd(M)
    sigma_reg = np.sqrt(s**2 + mu**2)
    level = float(np.sqrt(s[-1] ** 2 + mu**2))
    if implicit is None:
        implicit = (sp.issparse(R) and density(R) < IMPLICIT_DENSITY
                    and implicit_is_stable(T_R, sigma_reg[0], level))
    if implicit:
        return SvdPreconditioner(s, sigma_reg, level, float(mu), R=R, T_R=T_R, V_M=V_M)
    if Q_R is None:
        Q_R, _ = thin_qr(to_dense(R).T)
    return SvdPreconditioner(s, sigma_reg, level, float(mu), V=Q_R @ V_M)


def build_svdfree_precond(factors, level, Q_R=None, T_R=None, T_C=None,
                          chol_method="householder"):
    """SVD-free preconditioner; performs no small SVD."""
    if not level > 0:
        raise ValueError("target level must be positive")
    C, core, R = factors.C, factors.core, factors.R
    if T_C is None:
        T_C = chol_gram(C, method=chol_method)
    if T_R is None or Q_R is None:
        Q_R, T_R = thin_qr(to_dense(R).T)
    return SvdFreePreconditioner(Q_R, T_R, T_C, np.array(core.W), float(level), core=core)


@dataclass(frozen=True, eq=False)
class QrAccumulator:
    """Thin QR ``Q @ T`` of a column stack grown block by block."""

    Q: np.ndarray
    T: np.ndarray

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 0)), np.zeros((0, 0)))

    @property
    def ncols(self):
        return self.T.shape[0]


def augment_qr(acc, newcols, rtol=1e-12):
    """Append ``newcols`` with block Gram-Schmidt plus one re-orthogonalization.

    Raises
    ------
    RankDeficientError
        If a new column is (numerically) in the span of the existing ones,
        judged by ``|R_E[i, i]| <= rtol * ||newcols[:, i]||``.
    """
    Cn = to_dense(newcols)
    if Cn.ndim == 1:
        Cn = Cn[:, None]
    Q, T = acc.Q, acc.T
    P1 = Q.T @ Cn
    E = Cn - Q @ P1
    P2 = Q.T @ E
    E = E - Q @ P2
    Q_E, R_E = np.linalg.qr(E, mode="reduced")
    d = np.sign(np.diag(R_E))
    d[d == 0] = 1.0
    Q_E, R_E = Q_E * d, R_E * d[:, None]
    norms = np.linalg.norm(Cn, axis=0)
    bad = np.flatnonzero(np.abs(np.diag(R_E)) <= rtol * np.maximum(norms, np.finfo(float).tiny))
    if bad.size:
        col = int(bad[0])
        raise RankDeficientError(f"appended column {col} is dependent", column=acc.ncols + col)
    k, p = T.shape[0], Cn.shape[1]
    T_new = np.zeros((k + p, k + p))
    T_new[:k, :k] = T
    T_new[:k, k:] = P1 + P2
    T_new[k:, k:] = R_E
    return QrAccumulator(np.hstack([Q, Q_E]), T_new)


def optimal_precond(A, rank, mu):
    """Reference preconditioner from the exact truncated SVD (dense oracle).

    Maps the leading ``rank`` regularized singular values to
    ``sqrt(sigma_{rank+1}**2 + mu**2)``.
    """
    A = to_dense(A)
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    n = s.size
    if not 0 <= rank <= n:
        raise ValueError(f"rank must lie in [0, {n}]")
    nxt = s[rank] if rank < n else 0.0
    level = float(np.sqrt(nxt**2 + mu**2))
    sig = s[:rank]
    return SvdPreconditioner(sig, np.sqrt(sig**2 + mu**2), level, float(mu), V=Vt[:rank].T)


def dense_preconditioned(A, P, mu=0.0):
    """Dense ``A_mu @ P^-1`` (``(m+n) x n`` if ``mu > 0`` else ``m x n``)."""
    A = to_dense(A)
    n = A.shape[1]
    Pinv = P.apply_inv(np.eye(n))
    if mu > 0:
        return np.vstack([A @ Pinv, mu * Pinv])
    return A @ Pinv


def preconditioned_singular_values(A, P, mu=0.0):
    """Singular values of ``A_mu P^-1`` by dense SVD, nonincreasing.

    With ``mu == 0`` the stacked zero block is dropped (same singular values).
    """
    return np.linalg.svd(dense_preconditioned(A, P, mu), compute_uv=False)
