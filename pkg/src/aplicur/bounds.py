"""Closed-form convergence and approximation bounds, used as test oracles and
optional runtime diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotApplicableError


def chebyshev_bound(kappa, k):
    """``2 ((kappa - 1) / (kappa + 1))**k``; equals 2 at ``k = 0``."""
    if kappa < 1:
        raise ValueError("condition number must be >= 1")
    if k < 0:
        raise ValueError("iteration count must be >= 0")
    if k == 0:
        return 2.0
    if math.isinf(kappa):
        return 2.0
    return 2.0 * ((kappa - 1.0) / (kappa + 1.0)) ** k


@dataclass(frozen=True)
class SpectrumSummary:
    """Singular values split after index ``split`` into a leading and a trailing cluster."""

    sigma: tuple
    split: int

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("need at least two singular values")
        if np.any(s <= 0):
            raise ValueError("singular values must be positive")
        if np.any(np.diff(s) > 0):
            raise ValueError("singular values must be nonincreasing")
        if not 1 <= self.split < s.size:
            raise ValueError(f"split must lie in [1, {s.size - 1}]")
        object.__setattr__(self, "sigma", tuple(float(x) for x in s))

    @classmethod
    def from_values(cls, sigma, split):
        return cls(tuple(sorted((float(x) for x in sigma), reverse=True)), split)

    @property
    def kappa(self):
        return self.sigma[0] / self.sigma[-1]

    @property
    def kappa_trailing(self):
        return self.sigma[self.split] / self.sigma[-1]

    @property
    def width_leading(self):
        return self.sigma[0] ** 2 - self.sigma[self.split - 1] ** 2

    @property
    def width_trailing(self):
        return self.sigma[self.split] ** 2 - self.sigma[-1] ** 2

    @property
    def width(self):
        return max(self.width_leading, self.width_trailing)


@dataclass(frozen=True)
class TwoIntervalDebug:
    """Intermediate quantities of the equal-width two-interval construction.

    ``[a, b]`` and ``[c, d]`` are the enclosing intervals of squared singular
    values, ``ratio = bc/(ad)`` is the sharp constant, ``eta = |w1 - w2|``, and
    ``proof_constant`` is ``kappa_trailing**2 + max(2*eps/sigma_n**2,
    kappa_trailing**2 - 1)`` with ``eps`` the half-width of the leading cluster.
    """

    a: float
    b: float
    c: float
    d: float
    ratio: float
    eta: float
    constant: float
    proof_constant: float
    disjoint: bool


def two_interval_constant(spec):
    """``C = kappa_trailing**2 + w / sigma_n**2``."""
    return spec.kappa_trailing**2 + spec.width / spec.sigma[-1] ** 2


def two_interval_debug(spec):
    s = spec.sigma
    sn2, sl2 = s[-1] ** 2, s[spec.split - 1] ** 2
    w = spec.width
    a, b, c, d = sn2, sn2 + w, sl2, sl2 + w
    ratio = (b * c) / (a * d)
    half = 0.5 * spec.width_leading
    kt2 = spec.kappa_trailing**2
    return TwoIntervalDebug(a, b, c, d, ratio, abs(spec.width_leading - spec.width_trailing),
                            two_interval_constant(spec),
                            kt2 + max(2.0 * half / sn2, kt2 - 1.0), b < c)


def two_interval_bound(spec, k):
    """``((sqrt(C) - 1) / (sqrt(C) + 1))**floor(k/2)`` for a two-cluster spectrum.

    Raises
    ------
    NotApplicableError
        If the clusters touch (``sigma_split == sigma_{split+1}``).
    """
    if k < 0:
        raise ValueError("iteration count must be >= 0")
    s = spec.sigma
    if not s[spec.split - 1] > s[spec.split]:
        raise NotApplicableError("leading and trailing clusters overlap")
    j = k // 2
    if j == 0:
        return 1.0
    rc = math.sqrt(two_interval_constant(spec))
    return ((rc - 1.0) / (rc + 1.0)) ** j


def cond_number_bound(level, mu, norm_e):
    """``(sqrt(level**2 + mu**2) + ||E||) / (mu - ||E||)``, valid when ``||E|| < mu``."""
    if not norm_e < mu:
        raise NotApplicableError("condition-number bound requires ||E|| < mu")
    return (math.sqrt(level**2 + mu**2) + norm_e) / (mu - norm_e)


def phase_contraction(norm_e, level, mu):
    """Per-iteration contraction ``1 - 2 (mu - ||E||) / (mu + sqrt(level**2 + mu**2))``."""
    if not norm_e < mu:
        raise NotApplicableError("phase contraction requires ||E|| < mu")
    return 1.0 - 2.0 * (mu - norm_e) / (mu + math.sqrt(level**2 + mu**2))


def multiphase_bound(phases, mu):
    """``2**p * prod_i contraction_i**k_i`` over ``phases = [(norm_e, level, k), ...]``."""
    phases = list(phases)
    out = 2.0 ** len(phases)
    for norm_e, level, k in phases:
        base = phase_contraction(norm_e, level, mu)
        out *= base**k if k > 0 else 1.0
    return out


def cur_existence_bounds(rank, m, n):
    """Cross-approximation quality factors ``(rank + 1, sqrt(1 + l(l+2)(min(m,n) - l)))``."""
    p = min(m, n)
    if not 1 <= rank <= p:
        raise ValueError(f"rank must lie in [1, {p}]")
    return float(rank + 1), math.sqrt(1.0 + rank * (rank + 2) * (p - rank))
