"""Random embeddings and the randomized spectral-norm estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError
from .matrix import MatrixTarget, to_dense

NORM_EST_FACTOR = 10.0 * math.sqrt(2.0 / math.pi)


def sketch_dim(block):
    """Oversampled sketch size ``ceil(1.1 * block)``."""
    return int(math.ceil(1.1 * block - 1e-12))


@dataclass(eq=False)
class SparseSignEmbedding:
    """An ``s x m`` sparse sign matrix with ``xi`` entries of ``+-1/sqrt(xi)`` per column.

    ``applications`` counts how many times the embedding has been applied to
    a matrix; the solver reports it to certify single-sketch behaviour.
    """

    matrix: sp.csc_matrix
    xi: int
    seed: object = None
    applications: int = field(default=0, compare=False)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, A):
        return apply_sketch(self, A)


@dataclass(eq=False)
class GaussianEmbedding:
    """Dense ``s x m`` embedding with i.i.d. ``N(0, 1/s)`` entries."""

    matrix: np.ndarray
    seed: object = None
    applications: int = field(default=0, compare=False)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, A):
        return apply_sketch(self, A)


def sparse_sign(s, m, xi=8, seed=None):
    """Draw a sparse sign embedding.

    Each column receives ``min(xi, s)`` nonzeros at distinct, uniformly
    random rows, with independent Rademacher signs scaled by ``1/sqrt(xi)``.
    The scale uses the clamped ``xi`` so every column has unit norm.
    """
    if s < 1 or m < 1 or xi < 1:
        raise ValueError("sparse_sign needs s, m, xi >= 1")
    xi = min(int(xi), int(s))
    rng = np.random.default_rng(seed)
    # argpartition of uniform keys gives xi distinct rows per column
    keys = rng.random((m, s))
    rows = np.argpartition(keys, xi - 1, axis=1)[:, :xi] if xi < s else np.tile(np.arange(s), (m, 1))
    rows = np.sort(rows, axis=1)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(m, xi))
    data = signs.ravel() / math.sqrt(xi)
    indptr = np.arange(0, m * xi + 1, xi)
    S = sp.csc_matrix((data, rows.ravel(), indptr), shape=(s, m))
    return SparseSignEmbedding(S, xi, seed)


def gaussian(s, m, seed=None):
    rng = np.random.default_rng(seed)
    return GaussianEmbedding(rng.standard_normal((s, m)) / math.sqrt(s), seed)


def apply_sketch(S, A):
    """Exact product ``S @ A`` returned dense (``s x n``).

    ``A`` may be a dense array, a sparse matrix, or a
    :class:`~aplicur.matrix.MatrixTarget` / ``AugmentedOperator``.
    """
    rows = A.shape[0]
    if S.shape[1] != rows:
        raise ShapeError(f"embedding is {S.shape}, matrix has {rows} rows")
    S.applications += 1
    if isinstance(A, MatrixTarget):
        return A.sketch(S.matrix)
    return to_dense(S.matrix @ A)


def spectral_norm_estimate(E, r=10, seed=None):
    """Probabilistic upper bound ``10*sqrt(2/pi) * max_i ||E w_i||`` on ``||E||_2``.

    The probes ``w_i`` are unnormalized standard Gaussian vectors. The bound
    holds with probability at least ``1 - 10**-r``.
    """
    if r < 1:
        raise ValueError("probe count r must be >= 1")
    rng = np.random.default_rng(seed)
    n = E.shape[1]
    W = rng.standard_normal((n, r))
    EW = to_dense(E @ W)
    return NORM_EST_FACTOR * float(np.max(np.linalg.norm(EW, axis=0)))
