"""Single-sketch rank-adaptive CUR approximation.

``CurState`` grows row/column index sets ``I``, ``J`` by blocks, driven by
pivoting on the sketched residual ``Y - Y[:, J] A(I, J)^-1 A(I, :)`` where
``Y = S A`` is formed exactly once.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import SingularMatrixError
from .matrix import EPS, MatrixTarget, lu_partial_pivot, to_dense
from .sketching import apply_sketch, sketch_dim, sparse_sign, spectral_norm_estimate

logger = logging.getLogger(__name__)

SINGULAR_RCOND = 1e-14


class CoreFactor:
    """Factorization of the intersection ``W = A(I, J)`` used in place of ``pinv(W)``.

    Parameters
    ----------
    W : ndarray, shape (l, l)
    method : {"qr", "lu"}
    """

    def __init__(self, W, method="qr"):
        W = np.array(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("intersection block must be square")
        self.W = W
        self.method = method
        k = W.shape[0]
        if k == 0:
            self.rcond = 1.0
            return
        anorm = np.linalg.norm(W, 1)
        if anorm == 0.0:
            raise SingularMatrixError("intersection block is zero")
        if method == "qr":
            self._Q, self._R = scipy.linalg.qr(W)
            rcond, _ = lapack.dtrcon(self._R, norm="1", uplo="U", diag="N")
        elif method == "lu":
            self._lu = scipy.linalg.lu_factor(W, check_finite=False)
            rcond, _ = lapack.dgecon(self._lu[0], anorm, norm="1")
        else:
            raise ValueError(f"unknown core factorization {method!r}")
        self.rcond = float(rcond)
        if not np.isfinite(self.rcond) or self.rcond < SINGULAR_RCOND:
            raise SingularMatrixError(
                f"intersection A(I,J) numerically singular (rcond={self.rcond:.2e})"
            )

    @property
    def size(self):
        return self.W.shape[0]

    def solve(self, B):
        """``A(I,J)^-1 @ B``."""
        B = np.asarray(B, dtype=float)
        if self.size == 0:
            return np.zeros((0,) + B.shape[1:])
        if self.method == "qr":
            return scipy.linalg.solve_triangular(self._R, self._Q.T @ B, check_finite=False)
        return scipy.linalg.lu_solve(self._lu, B, check_finite=False)

    def solve_transpose(self, B):
        """``A(I,J)^-T @ B``."""
        B = np.asarray(B, dtype=float)
        if self.size == 0:
            return np.zeros((0,) + B.shape[1:])
        if self.method == "qr":
            return self._Q @ scipy.linalg.solve_triangular(self._R, B, trans=1, check_finite=False)
        return scipy.linalg.lu_solve(self._lu, B, trans=1, check_finite=False)


@dataclass
class CurFactors:
    """A CUR approximation ``C @ pinv(A(I,J)) @ R`` with zero-based index sets."""

    C: object
    core: CoreFactor
    R: object
    I: np.ndarray
    J: np.ndarray

    @property
    def rank(self):
        return len(self.I)

    def apply(self, v):
        """``C U R v`` evaluated right to left; never forms the product."""
        return cur_apply(self, v)

    def to_dense(self):
        return to_dense(self.C) @ self.core.solve(to_dense(self.R))


def cur_apply(factors, v):
    v = np.asarray(v, dtype=float)
    Rv = np.asarray(factors.R @ v)
    return np.asarray(factors.C @ factors.core.solve(Rv)).reshape(
        (factors.C.shape[0],) + v.shape[1:]
    )


def _as_target(A):
    return A if isinstance(A, MatrixTarget) else MatrixTarget(A)


@dataclass(eq=False)
class CurState:
    """Mutable state of the incremental CUR approximation.

    Attributes
    ----------
    target : MatrixTarget or AugmentedOperator
    embedding : SparseSignEmbedding
    Y : ndarray
        The sketch ``S @ target`` (``s x n``), never recomputed.
    I, J : list of int
        Selected rows and columns, in selection order.
    E_row : ndarray
        Sketched residual ``Y - Y[:, J] A(I,J)^-1 R``.
    rho : float
        Latest spectral-norm estimate of ``E_row`` (``inf`` before the first refresh).
    """

    target: MatrixTarget
    embedding: object
    Y: np.ndarray
    block: int
    probes: int = 10
    core_method: str = "qr"
    probe_seed: object = None
    I: list = field(default_factory=list)
    J: list = field(default_factory=list)
    C: object = None
    R: object = None
    core: CoreFactor = None
    E_row: np.ndarray = None
    rho: float = math.inf
    rho_history: list = field(default_factory=list)
    last_added: int = 0
    partial: bool = False

    def __post_init__(self):
        if self.E_row is None:
            self.E_row = self.Y.copy()
        self._probe_rng = np.random.default_rng(self.probe_seed)

    @property
    def rank(self):
        return len(self.I)

    @property
    def max_rank(self):
        m, n = self.target.shape
        return min(m, n)

    @property
    def sketch_applications(self):
        return self.embedding.applications

    def factors(self):
        return CurFactors(self.C, self.core, self.R, np.array(self.I, dtype=np.intp),
                          np.array(self.J, dtype=np.intp))

    def estimate_norm(self):
        return spectral_norm_estimate(self.E_row, self.probes, seed=self._probe_rng)

    def snapshot(self):
        return dict(I=list(self.I), J=list(self.J), C=self.C, R=self.R, core=self.core,
                    E_row=self.E_row, rho=self.rho, rho_history=list(self.rho_history),
                    last_added=self.last_added, partial=self.partial)

    def restore(self, snap):
        for key, value in snap.items():
            setattr(self, key, value)

    def to_json(self):
        return json.dumps({"I": [int(i) for i in self.I], "J": [int(j) for j in self.J],
                           "rho_history": [float(r) for r in self.rho_history]})


def init_state(A, block, seed=None, xi=8, probes=10, core_method="qr"):
    """Sketch ``A`` once with an oversampled sparse sign embedding.

    ``A`` may be a matrix or an :class:`~aplicur.matrix.AugmentedOperator`.
    """
    target = _as_target(A)
    m_rows, n = target.shape
    if block < 1:
        raise ValueError("block size must be >= 1")
    if block > n:
        raise ValueError(f"block size {block} exceeds column count {n}")
    sketch_seed, probe_seed = np.random.SeedSequence(seed).spawn(2)
    S = sparse_sign(sketch_dim(block), m_rows, xi, seed=sketch_seed)
    Y = apply_sketch(S, target)
    return CurState(target=target, embedding=S, Y=Y, block=int(block), probes=probes,
                    core_method=core_method, probe_seed=probe_seed)


def augment(state):
    """Append up to ``block`` new row and column indices.

    Columns come from partial pivoting on ``E_row.T`` with already selected
    columns zeroed; rows from partial pivoting on the column residual
    ``A(:, J+) - CUR(:, J+)`` with already selected rows zeroed. Pivots of
    numerically zero magnitude are not taken, so the block may come out
    short (``state.partial`` is set). Factors are *not* refreshed.

    Returns
    -------
    int
        Number of indices added to each of ``I`` and ``J``.
    """
    ell = state.rank
    want = min(state.block, state.max_rank - ell)
    state.last_added = 0
    if want <= 0:
        state.partial = True
        return 0

    E = np.array(state.E_row, copy=True)
    if state.J:
        E[:, state.J] = 0.0
    npiv = min(want, E.shape[0])
    cols, cmags = lu_partial_pivot(E.T, npiv=npiv, return_magnitudes=True)
    ytol = 100.0 * EPS * (np.max(np.abs(state.Y)) if state.Y.size else 0.0)
    k = _admissible_prefix(cmags, ytol)
    cols = cols[:k]
    if k == 0:
        state.partial = True
        logger.info("augment: sketched residual numerically zero at rank %d", ell)
        return 0

    Acols = to_dense(state.target.columns(cols))
    Ecol = Acols.copy()
    if ell:
        Ecol -= to_dense(state.C) @ state.core.solve(to_dense(state.R[:, cols]))
        Ecol[state.I, :] = 0.0
    rows, rmags = lu_partial_pivot(Ecol, npiv=k, return_magnitudes=True)
    atol = 100.0 * EPS * np.max(np.abs(Acols))
    k = _admissible_prefix(rmags, atol)
    if k < want:
        state.partial = True
        logger.info("augment: partial block of %d/%d at rank %d", k, want, ell)
    if k == 0:
        return 0
    state.J.extend(int(j) for j in cols[:k])
    state.I.extend(int(i) for i in rows[:k])
    state.last_added = k
    return k


def _admissible_prefix(mags, tol):
    bad = np.flatnonzero(~(mags > tol))
    return int(bad[0]) if bad.size else int(mags.size)


def refresh_factors(state):
    """Rebuild ``C``, ``R``, the core factorization, ``E_row`` and ``rho``.

    Raises
    ------
    SingularMatrixError
        If ``A(I, J)`` is numerically singular. State is left unchanged.
    """
    if not state.I:
        raise ValueError("refresh_factors needs at least one selected index")
    I = np.array(state.I, dtype=np.intp)
    J = np.array(state.J, dtype=np.intp)
    core = CoreFactor(state.target.submatrix(I, J), method=state.core_method)
    C = state.target.columns(J)
    R = state.target.rows(I)
    Z = core.solve(to_dense(R))
    state.C, state.R, state.core = C, R, core
    state.E_row = state.Y - state.Y[:, J] @ Z
    state.rho = state.estimate_norm()
    state.rho_history.append(state.rho)
    return state


def grow(state):
    """``augment`` followed by ``refresh_factors``; rolls back if the core is singular.

    Returns the number of indices added (0 if nothing admissible or rolled back).
    """
    snap = state.snapshot()
    k = augment(state)
    if k == 0:
        if state.rank == 0 and math.isinf(state.rho):
            state.rho = state.estimate_norm()
            state.rho_history.append(state.rho)
        return 0
    try:
        refresh_factors(state)
    except SingularMatrixError:
        state.restore(snap)
        state.partial = True
        state.last_added = 0
        raise
    return k


def fixed_rank_cur(A, rank, seed=None, xi=8, core_method="qr"):
    """One-shot sketched cross approximation of a given rank.

    Columns come from partial pivoting on ``(S A).T`` with
    ``S`` of ``max(rank, floor(1.1 rank))`` rows; rows from partial pivoting
    on the selected columns.
    """
    target = _as_target(A)
    m, n = target.shape
    if not 1 <= rank <= min(m, n):
        raise ValueError(f"rank must lie in [1, {min(m, n)}]")
    s = max(rank, int(math.floor(1.1 * rank)))
    S = sparse_sign(s, m, xi, seed=seed)
    Y = apply_sketch(S, target)
    J = lu_partial_pivot(Y.T, npiv=rank)
    C = target.columns(J)
    I = lu_partial_pivot(to_dense(C), npiv=rank)
    R = target.rows(I)
    core = CoreFactor(target.submatrix(I, J), method=core_method)
    return CurFactors(C, core, R, I, J)
