"""Matrix storage, submatrix extraction and the small dense factorizations.

Dense matrices are plain ``numpy.ndarray`` objects; sparse matrices are held
in compressed-sparse-column form (``scipy.sparse.csc_matrix``) because the
CUR machinery slices columns far more often than rows.
"""

from __future__ import annotations

from collections import Counter

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import lapack

from .errors import (
    ConvergenceError,
    InvalidIndexError,
    NotPositiveDefiniteError,
    RankDeficientError,
    ShapeError,
    SingularMatrixError,
)

EPS = np.finfo(float).eps
SMALL_DIM_CAP = 4096

#: Per-process tally of expensive kernel invocations (tests read it to prove
#: that e.g. the SVD-free preconditioner never calls ``small_svd``).
op_counts: Counter = Counter()


def is_sparse(A) -> bool:
    return sp.issparse(A)


def as_matrix(A):
    """Normalize ``A`` to float64 dense ndarray or canonical CSC storage."""
    if sp.issparse(A):
        A = sp.csc_matrix(A, dtype=float, copy=True)
        A.sum_duplicates()
        A.eliminate_zeros()
        A.sort_indices()
        return A
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={A.ndim}")
    return A


def to_dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def density(A) -> float:
    m, n = A.shape
    if m * n == 0:
        return 0.0
    nnz = A.nnz if sp.issparse(A) else np.count_nonzero(A)
    return nnz / (m * n)


def _check_index(idx, size, what):
    if idx is None:
        return None
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise InvalidIndexError(f"{what} index list must be one-dimensional")
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise InvalidIndexError(f"{what} indices must be integers")
    idx = idx.astype(np.intp, copy=False)
    if idx.size:
        if idx.min() < 0 or idx.max() >= size:
            raise InvalidIndexError(f"{what} index out of range [0, {size})")
        if np.unique(idx).size != idx.size:
            raise InvalidIndexError(f"duplicate {what} index")
    return idx


def extract(A, rows=None, cols=None):
    """Submatrix ``A[rows, cols]``; ``None`` selects everything.

    Indices are zero-based, must be in range and must not repeat. Sparse
    input yields CSC output.
    """
    m, n = A.shape
    rows = _check_index(rows, m, "row")
    cols = _check_index(cols, n, "column")
    out = A
    if cols is not None:
        out = out[:, cols]
    if rows is not None:
        out = out[rows, :]
    if sp.issparse(out):
        return sp.csc_matrix(out)
    return np.array(out, dtype=float)


def lu_partial_pivot(M, npiv=None, return_magnitudes=False):
    """Row pivot order of Gaussian elimination with partial pivoting.

    Rows are never physically swapped, so among equal-magnitude candidates
    ``argmax`` returns the lowest original row index. An all-zero candidate
    column still yields a pivot (the lowest unused row) and elimination
    continues.

    Parameters
    ----------
    M : array_like, shape (m, k)
    npiv : int, optional
        Number of pivots to perform, at most ``min(m, k)``.
    return_magnitudes : bool
        Also return ``|pivot|`` for every step.

    Returns
    -------
    order : ndarray of int
        Zero-based row indices in selection order.
    magnitudes : ndarray, optional
    """
    W = np.array(to_dense(M), dtype=float, copy=True)
    m, k = W.shape
    limit = min(m, k)
    if npiv is None:
        npiv = limit
    if npiv < 0 or npiv > limit:
        raise ShapeError(f"cannot take {npiv} pivots from a {m}x{k} matrix")
    active = np.ones(m, dtype=bool)
    order = np.empty(npiv, dtype=np.intp)
    mags = np.empty(npiv)
    for j in range(npiv):
        cand = np.abs(W[:, j])
        cand[~active] = -1.0
        p = int(np.argmax(cand))
        piv = W[p, j]
        order[j] = p
        mags[j] = abs(piv)
        active[p] = False
        if piv != 0.0 and j + 1 < k:
            rows = np.flatnonzero(active)
            mult = W[rows, j] / piv
            W[np.ix_(rows, np.arange(j + 1, k))] -= np.outer(mult, W[p, j + 1:])
    if return_magnitudes:
        return order, mags
    return order


def _sign_fix(Q, T):
    d = np.sign(np.diag(T))
    d[d == 0] = 1.0
    return Q * d, T * d[:, None]


def thin_qr(M, rtol=None):
    """Economy QR with a nonnegative diagonal on ``T``.

    Raises
    ------
    RankDeficientError
        If some ``|T[i, i]|`` falls below ``rtol`` times the largest column norm.
    """
    M = to_dense(M)
    m, k = M.shape
    if m < k:
        raise ShapeError(f"thin_qr needs m >= k, got {m}x{k}")
    Q, T = np.linalg.qr(M, mode="reduced")
    Q, T = _sign_fix(Q, T)
    _check_triangular_rank(T, M, rtol)
    return Q, T


def _check_triangular_rank(T, M, rtol):
    k = T.shape[0]
    if k == 0:
        return
    if rtol is None:
        rtol = 10.0 * max(M.shape) * EPS
    scale = np.max(np.linalg.norm(M, axis=0)) if M.size else 0.0
    diag = np.abs(np.diag(T))
    bad = np.flatnonzero(diag <= rtol * scale)
    if scale == 0.0 or bad.size:
        col = int(bad[0]) if bad.size else 0
        raise RankDeficientError(f"rank deficiency detected at column {col}", column=col)


def chol_gram(C, method="cholesky"):
    """Upper-triangular ``T`` with ``T.T @ T == C.T @ C``.

    ``method="cholesky"`` factorizes the Gram matrix directly (cheap, squares
    the condition number). ``method="householder"`` takes the triangular
    factor of a Householder QR of ``C``, which is the same matrix up to
    rounding but remains accurate for ill-conditioned ``C``.
    """
    if method == "householder":
        Cd = to_dense(C)
        T = np.linalg.qr(Cd, mode="r")
        d = np.sign(np.diag(T))
        d[d == 0] = 1.0
        T = T * d[:, None]
        _check_triangular_rank(T, Cd, None)
        return T
    if method != "cholesky":
        raise ValueError(f"unknown chol_gram method {method!r}")
    G = C.T @ C
    G = to_dense(G)
    G = 0.5 * (G + G.T)
    T, info = lapack.dpotrf(G, lower=0, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"Gram matrix not positive definite (pivot {info - 1})", column=info - 1
        )
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    T = np.triu(T)
    # LAPACK accepts pivots that are positive only through rounding
    d2 = np.diag(T) ** 2
    tiny = np.flatnonzero(d2 <= G.shape[0] * EPS * np.max(np.diag(G)))
    if tiny.size:
        raise NotPositiveDefiniteError(
            f"Gram matrix numerically singular (pivot {tiny[0]})", column=int(tiny[0])
        )
    return T


def small_svd(M, cap=SMALL_DIM_CAP):
    """Full SVD ``M = U @ diag(s) @ Vt`` of a small dense matrix.

    Returns ``(U, s, V)`` with ``V`` (not its transpose) and ``s``
    nonincreasing.
    """
    M = to_dense(M)
    if max(M.shape) > cap:
        raise ShapeError(f"small_svd limited to dimension {cap}, got {M.shape}")
    op_counts["small_svd"] += 1
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    return U, s, Vt.T


def tri_solve(T, B, trans=False, lower=False):
    """Solve ``T X = B`` (or ``T.T X = B`` when ``trans``) for triangular ``T``."""
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ShapeError("triangular factor must be square")
    if np.any(np.diag(T) == 0.0):
        raise SingularMatrixError("zero on the diagonal of a triangular factor")
    B = np.asarray(B, dtype=float)
    if B.shape[0] != T.shape[0]:
        raise ShapeError(f"rhs has {B.shape[0]} rows, factor is {T.shape[0]}x{T.shape[0]}")
    return scipy.linalg.solve_triangular(T, B, trans=1 if trans else 0, lower=lower,
                                         check_finite=False)


class MatrixTarget:
    """Uniform accessor around a plain matrix ``A``.

    Mirrors :class:`AugmentedOperator` so CUR code can target either.
    """

    mu = 0.0

    def __init__(self, A):
        self.A = as_matrix(A)
        self._rowview = None

    @property
    def shape(self):
        return self.A.shape

    @property
    def base_shape(self):
        return self.A.shape

    @property
    def sparse(self):
        return sp.issparse(self.A)

    def _rows_source(self):
        if not self.sparse:
            return self.A
        if self._rowview is None:
            self._rowview = self.A.tocsr()
        return self._rowview

    def matvec(self, v):
        return np.asarray(self.A @ v).ravel()

    def rmatvec(self, u):
        return np.asarray(self.A.T @ u).ravel()

    def columns(self, J):
        J = _check_index(J, self.shape[1], "column")
        return extract(self.A, None, J)

    def rows(self, I):
        I = _check_index(I, self.shape[0], "row")
        out = self._rows_source()[I, :]
        return sp.csc_matrix(out) if self.sparse else np.array(out)

    def submatrix(self, I, J):
        I = _check_index(I, self.shape[0], "row")
        J = _check_index(J, self.shape[1], "column")
        return to_dense(extract(self.A, I, J))

    def sketch(self, S):
        """``S @ A`` as a dense array."""
        return to_dense(S @ self.A)


class AugmentedOperator(MatrixTarget):
    """The stacked matrix ``[A; mu*I]`` without materializing the identity block.

    Row index ``i < m`` refers to row ``i`` of ``A``; ``i >= m`` to
    ``mu * e_{i-m}``.
    """

    def __init__(self, A, mu):
        if mu < 0:
            raise ValueError("regularization mu must be nonnegative")
        super().__init__(A)
        self.mu = float(mu)

    @property
    def shape(self):
        m, n = self.A.shape
        return (m + n, n)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        return np.concatenate([np.asarray(self.A @ v).ravel(), self.mu * v])

    def rmatvec(self, u):
        u = np.asarray(u, dtype=float)
        m = self.A.shape[0]
        return np.asarray(self.A.T @ u[:m]).ravel() + self.mu * u[m:]

    def columns(self, J):
        m, n = self.A.shape
        J = _check_index(J, n, "column")
        top = extract(self.A, None, J)
        bottom = sp.csc_matrix(
            (np.full(J.size, self.mu), (J, np.arange(J.size))), shape=(n, J.size)
        )
        if self.sparse:
            return sp.csc_matrix(sp.vstack([top, bottom]))
        return np.vstack([top, bottom.toarray()])

    def rows(self, I):
        m, n = self.A.shape
        I = _check_index(I, m + n, "row")
        top_mask = I < m
        out = sp.lil_matrix((I.size, n)) if self.sparse else np.zeros((I.size, n))
        if top_mask.any():
            pos = np.flatnonzero(top_mask)
            block = self._rows_source()[I[top_mask], :]
            if self.sparse:
                out[pos, :] = block
            else:
                out[pos, :] = block
        for p in np.flatnonzero(~top_mask):
            out[p, I[p] - m] = self.mu
        return sp.csc_matrix(out) if self.sparse else out

    def submatrix(self, I, J):
        m, n = self.A.shape
        I = _check_index(I, m + n, "row")
        J = _check_index(J, n, "column")
        out = np.zeros((I.size, J.size))
        top = I < m
        if top.any():
            out[top, :] = to_dense(extract(self.A, I[top], J))
        for p in np.flatnonzero(~top):
            hit = np.flatnonzero(J == I[p] - m)
            if hit.size:
                out[p, hit[0]] = self.mu
        return out

    def sketch(self, S):
        m = self.A.shape[0]
        S = sp.csc_matrix(S) if sp.issparse(S) else np.asarray(S)
        top = S[:, :m] @ self.A
        bottom = self.mu * S[:, m:]
        return to_dense(top) + to_dense(bottom)


def read_matrix_market(path):
    """Load a Matrix Market file; coordinate files come back as CSC."""
    A = scipy.io.mmread(str(path))
    return as_matrix(A)


def write_matrix_market(path, A, comment=""):
    """Write ``A`` in Matrix Market format (coordinate if sparse, array if dense)."""
    scipy.io.mmwrite(str(path), A, comment=comment, precision=17)
