"""Synthetic least-squares test problems with prescribed spectra and coherence."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ProblemTooLargeError, ShapeError
from .matrix import as_matrix, read_matrix_market, to_dense, write_matrix_market

logger = logging.getLogger(__name__)

PROFILES = ("sharp-1e7", "sharp-1e15", "smooth-1e15")
DENSE_ORACLE_LIMIT = 4000
MAX_REDRAWS = 100


def spectrum(profile, n):
    """Singular values of a named profile, nonincreasing.

    ``sharp-*`` puts ``round(0.2 n)`` values log-spaced from ``1e2`` to
    ``1e-2`` ahead of a tail log-spaced from ``10**-4.8`` to ``1e-5``
    (``1e-12`` to ``1e-13`` for ``sharp-1e15``). ``smooth-1e15`` is the
    root-exponential decay ``10**(2 - 15 sqrt((i-1)/(n-1)))``.
    """
    if n < 5:
        raise ValueError("spectrum profiles need n >= 5")
    if profile in ("sharp-1e7", "sharp-1e15"):
        head = int(round(0.2 * n))
        lo, hi = (-4.8, -5.0) if profile == "sharp-1e7" else (-12.0, -13.0)
        return np.concatenate([np.logspace(2, -2, head), np.logspace(lo, hi, n - head)])
    if profile == "smooth-1e15":
        t = np.sqrt(np.arange(n) / (n - 1))
        return 10.0 ** (2.0 - 15.0 * t)
    raise ValueError(f"unknown spectrum profile {profile!r}; choose from {PROFILES}")


def _rng(seed):
    return np.random.default_rng(seed)


def haar_orthogonal(m, k, rng):
    """First ``k`` columns of a Haar-distributed orthogonal ``m x m`` matrix."""
    Q, T = np.linalg.qr(rng.standard_normal((m, k)))
    return Q * np.sign(np.diag(T))


def dense_matrix(m, n, sigma, coherence="incoherent", seed=None):
    """Dense ``U diag(sigma) V^T`` with Haar or near-identity (coherent) factors."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (n,):
        raise ShapeError(f"need {n} singular values, got {sigma.shape}")
    if m < n:
        raise ShapeError("dense generator requires m >= n")
    if coherence == "incoherent":
        rng = _rng(seed)
        U = haar_orthogonal(m, n, rng)
        V = haar_orthogonal(n, n, rng)
    elif coherence == "coherent":
        U, _ = np.linalg.qr(np.eye(m, n) + 1e-8 * np.ones((m, n)))
        V, _ = np.linalg.qr(np.eye(n) + 1e-8 * np.ones((n, n)))
    else:
        raise ValueError("coherence must be 'incoherent' or 'coherent'")
    return (U * sigma) @ V.T


def sparse_matrix(m, n, sigma, f=0, density=0.01, seed=None):
    """Sparse ``C diag(sigma)`` where ``C`` has unit-norm columns.

    ``C`` is the column normalization of ``D**f B`` with ``B`` sparse
    standard normal and ``D`` a diagonal of standard normals; larger ``f``
    concentrates mass on few rows and raises the coherence.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (n,):
        raise ShapeError(f"need {n} singular values, got {sigma.shape}")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rng = _rng(seed)
    B = sp.random(m, n, density=density, format="csc", random_state=rng,
                  data_rvs=rng.standard_normal)
    d = rng.standard_normal(m) ** f if f else np.ones(m)
    Ct = sp.csc_matrix(sp.diags(d) @ B)
    norms = np.sqrt(np.asarray(Ct.multiply(Ct).sum(axis=0)).ravel())
    for j in np.flatnonzero(norms == 0.0):
        for _ in range(MAX_REDRAWS):
            k = max(1, rng.binomial(m, density))
            rows = rng.choice(m, size=k, replace=False)
            col = np.zeros(m)
            col[rows] = d[rows] * rng.standard_normal(k)
            if np.any(col != 0.0):
                break
        else:
            raise ValueError(f"column {j} stayed empty after {MAX_REDRAWS} redraws")
        Ct = sp.lil_matrix(Ct)
        Ct[:, j] = col[:, None]
        Ct = sp.csc_matrix(Ct)
        norms[j] = np.linalg.norm(col)
    C = Ct @ sp.diags(1.0 / norms)
    return as_matrix(C @ sp.diags(sigma))


def column_basis(A, rtol=None):
    """Orthonormal basis of ``range(A)`` from a dense SVD."""
    Ad = to_dense(A)
    U, s, _ = np.linalg.svd(Ad, full_matrices=False)
    if rtol is None:
        rtol = max(Ad.shape) * np.finfo(float).eps
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, :r]


def rhs_consistent_x(A, noise=0.0, seed=None):
    """``b = A x* + e`` with Gaussian ``x*`` and ``e`` orthogonal to ``range(A)``.

    ``noise`` is the absolute norm of ``e``.

    Returns
    -------
    b, x_star, e : ndarray
    """
    if noise < 0:
        raise ValueError("noise norm must be nonnegative")
    m, n = A.shape
    rng = _rng(seed)
    x = rng.standard_normal(n)
    Ax = np.asarray(A @ x).ravel()
    e = np.zeros(m)
    if noise > 0:
        whole = "range(A) is the whole space; no orthogonal noise exists"
        if max(m, n) <= DENSE_ORACLE_LIMIT:
            # full thin basis: a superset of range(A) even when the tail is tiny
            Q = np.linalg.svd(to_dense(A), full_matrices=False)[0]
            if Q.shape[1] >= m:
                raise ValueError(whole)
            e = rng.standard_normal(m)
            for _ in range(2):
                e = e - Q @ (Q.T @ e)
        else:
            if m <= n:
                raise ValueError(whole)
            e = _orthogonalize(A, rng.standard_normal(m))
        e *= noise / np.linalg.norm(e)
    return Ax + e, x, e


def _orthogonalize(A, v, rtol=1e-11, passes=30):
    """Remove the ``range(A)`` component of ``v`` by repeated iterative projection."""
    fro = float(spla.norm(A)) if sp.issparse(A) else float(np.linalg.norm(A))
    for _ in range(passes):
        y = spla.lsqr(A, v, atol=1e-16, btol=1e-16, conlim=1e20,
                      iter_lim=10 * A.shape[1])[0]
        v = v - np.asarray(A @ y).ravel()
        if np.linalg.norm(np.asarray(A.T @ v).ravel()) <= rtol * fro * np.linalg.norm(v):
            return v
    logger.warning("noise orthogonality target not met after %d passes", passes)
    return v


def rhs_consistent_b(A, seed=None):
    """``b = Q g`` for an orthonormal basis ``Q`` of ``range(A)`` and Gaussian ``g``.

    Beyond the dense limit ``b = A g`` is used instead; it lies in the same
    range but is not isotropic within it.
    """
    rng = _rng(seed)
    if max(A.shape) > DENSE_ORACLE_LIMIT:
        return np.asarray(A @ rng.standard_normal(A.shape[1])).ravel()
    Q = column_basis(A)
    return Q @ rng.standard_normal(Q.shape[1])


def coherence(A):
    """Largest row norm of an orthonormal basis of ``range(A)``."""
    Q = column_basis(A)
    return float(np.max(np.linalg.norm(Q, axis=1)))


def optimal_solution(A, b, mu=0.0):
    """Dense least-squares minimizer of ``||A x - b||^2 + mu^2 ||x||^2`` by Householder QR.

    Requires full column rank of ``A`` when ``mu == 0``.
    """
    Ad = to_dense(A)
    m, n = Ad.shape
    if max(m, n) > DENSE_ORACLE_LIMIT:
        raise ProblemTooLargeError(
            f"dense oracle limited to dimension {DENSE_ORACLE_LIMIT}, got {m}x{n}; "
            "use a smaller instance"
        )
    if mu > 0:
        Ad = np.vstack([Ad, mu * np.eye(n)])
        b = np.concatenate([b, np.zeros(n)])
    Q, T = np.linalg.qr(Ad, mode="reduced")
    return scipy.linalg.solve_triangular(T, Q.T @ b)


def relative_residual(A, x, b):
    bn = np.linalg.norm(b)
    r = np.linalg.norm(np.asarray(A @ x).ravel() - b)
    return float(r / bn) if bn > 0 else float(r)


@dataclass
class ProblemInstance:
    """A regularized least-squares problem with optional ground truth.

    ``meta`` may hold ``x_star``, ``noise``, ``coherence`` and the dense
    oracle values ``opt_relres`` (unregularized) and ``opt_relres_reg``
    (unaugmented relative residual of the regularized minimizer).
    """

    A: object
    b: np.ndarray
    mu: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = as_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.b.shape[0] != self.A.shape[0]:
            raise ShapeError(f"b has length {self.b.size}, A has {self.A.shape[0]} rows")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def shape(self):
        return self.A.shape

    def relres(self, x):
        return relative_residual(self.A, x, self.b)

    def attach_oracle(self):
        """Fill the dense-oracle residuals into ``meta``."""
        x0 = optimal_solution(self.A, self.b, 0.0)
        xm = optimal_solution(self.A, self.b, self.mu) if self.mu > 0 else x0
        self.meta["opt_relres"] = self.relres(x0)
        self.meta["opt_relres_reg"] = self.relres(xm)
        return self

    def save(self, stem):
        """Write ``stem.mtx``, ``stem.b.mtx`` and ``stem.json``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        write_matrix_market(stem.with_suffix(".mtx"), self.A)
        write_matrix_market(stem.with_suffix(".b.mtx"), self.b[:, None])
        meta = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.meta.items()}
        stem.with_suffix(".json").write_text(json.dumps({"mu": self.mu, "meta": meta}, indent=2))

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        A = read_matrix_market(stem.with_suffix(".mtx"))
        b = to_dense(read_matrix_market(stem.with_suffix(".b.mtx"))).ravel()
        side = json.loads(stem.with_suffix(".json").read_text())
        meta = side.get("meta", {})
        if "x_star" in meta:
            meta["x_star"] = np.asarray(meta["x_star"])
        return cls(A, b, float(side.get("mu", 0.0)), meta)


def make_problem(m, n, profile="sharp-1e7", kind="dense", coherence_level="incoherent",
                 f=0, density=0.01, rhs="consistent-x", noise=1e-2, noise_mode="relative",
                 mu=1e-4, seed=0, oracle=True):
    """Assemble a :class:`ProblemInstance` from generator parameters.

    ``noise_mode="relative"`` scales the noise norm by ``||A x*||``.
    """
    ss = np.random.SeedSequence(seed)
    s_mat, s_rhs = ss.spawn(2)
    sigma = spectrum(profile, n)
    if kind == "dense":
        A = dense_matrix(m, n, sigma, coherence_level, seed=s_mat)
    elif kind == "sparse":
        A = sparse_matrix(m, n, sigma, f=f, density=density, seed=s_mat)
    else:
        raise ValueError("kind must be 'dense' or 'sparse'")
    meta = {"profile": profile, "kind": kind, "m": m, "n": n, "seed": seed}
    if rhs == "consistent-x":
        if noise_mode == "relative":
            x_probe = _rng(s_rhs).standard_normal(n)
            eta = noise * float(np.linalg.norm(np.asarray(A @ x_probe).ravel()))
        elif noise_mode == "absolute":
            eta = noise
        else:
            raise ValueError("noise_mode must be 'relative' or 'absolute'")
        b, x, e = rhs_consistent_x(A, eta, seed=s_rhs)
        meta.update(x_star=x, noise=float(np.linalg.norm(e)))
    elif rhs == "consistent-b":
        b = rhs_consistent_b(A, seed=s_rhs)
    else:
        raise ValueError("rhs must be 'consistent-x' or 'consistent-b'")
    prob = ProblemInstance(A, b, mu, meta)
    if oracle:
        prob.attach_oracle()
    return prob
