"""LSQR (Golub-Kahan bidiagonalization) with right preconditioning and
phase-level dynamic stopping."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BreakdownError, ShapeError

REASONS = ("gradient-tol", "residual-tol", "dynamic-rate", "dynamic-diff",
           "iteration-cap", "exact-zero-rhs")


class LinearOperator:
    """Forward/transpose pair with application counters.

    Parameters
    ----------
    shape : (int, int)
    matvec, rmatvec : callable
        ``v -> Op @ v`` and ``u -> Op.T @ u``.
    """

    def __init__(self, shape, matvec, rmatvec):
        self.shape = tuple(shape)
        self._matvec = matvec
        self._rmatvec = rmatvec
        self.n_forward = 0
        self.n_transpose = 0

    @property
    def matvecs(self):
        return self.n_forward + self.n_transpose

    def matvec(self, v):
        self.n_forward += 1
        return self._matvec(v)

    def rmatvec(self, u):
        self.n_transpose += 1
        return self._rmatvec(u)

    @classmethod
    def from_matrix(cls, A):
        return cls(A.shape, lambda v: np.asarray(A @ v).ravel(),
                   lambda u: np.asarray(A.T @ u).ravel())

    @classmethod
    def preconditioned(cls, target, P):
        """``target @ P^-1`` for a :class:`~aplicur.matrix.MatrixTarget`-like ``target``."""
        return cls(target.shape, lambda y: target.matvec(P.apply_inv(y)),
                   lambda u: P.apply_inv_transpose(target.rmatvec(u)))


@dataclass
class StopConfig:
    """Stopping parameters of one LSQR run.

    ``eps`` bounds the relative gradient ``||Op^T r|| / (||Op|| ||r||)``;
    ``nu`` is the dynamic-rate ratio (``inf`` disables dynamic stopping);
    ``floor`` is the level below which a per-iteration decrease of the
    residual estimate ends the phase; ``max_iter=None`` means ``4 n``.
    """

    eps: float = 1e-10
    nu: float = math.inf
    floor: float = 0.0
    max_iter: int = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("iteration cap must be >= 1")


@dataclass
class TraceRow:
    phase: int
    iter: int
    phibar: float
    cvgrate: float
    cvgdiff: float
    matvecs: int
    wall_ms: float
    relres: float = float("nan")


CSV_COLUMNS = ("phase", "iter", "phibar", "relres", "matvecs", "wall_ms", "reason")


@dataclass
class LsqrTrace:
    """Per-iteration log; iteration 0 of each phase holds the initial residual."""

    rows: list = field(default_factory=list)
    reason: str = None
    phase_reasons: dict = field(default_factory=dict)

    def phibars(self, phase=None):
        return np.array([r.phibar for r in self.rows if phase is None or r.phase == phase])

    def extend(self, other):
        self.rows.extend(other.rows)
        self.phase_reasons.update(other.phase_reasons)
        self.reason = other.reason

    def to_csv(self, with_time=True):
        """CSV text with a header row; ``reason`` is filled on each phase's last row."""
        buf = io.StringIO()
        cols = CSV_COLUMNS if with_time else tuple(c for c in CSV_COLUMNS if c != "wall_ms")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        last = {}
        for k, r in enumerate(self.rows):
            last[r.phase] = k
        ends = {k: self.phase_reasons.get(p, "") for p, k in last.items()}
        for k, r in enumerate(self.rows):
            rec = {"phase": r.phase, "iter": r.iter, "phibar": repr(float(r.phibar)),
                   "relres": repr(float(r.relres)), "matvecs": r.matvecs,
                   "wall_ms": f"{r.wall_ms:.3f}", "reason": ends.get(k, "")}
            writer.writerow([rec[c] for c in cols])
        return buf.getvalue()


def dynamic_stop_check(phibars, floor, nu):
    """Decide whether the current phase has slowed down enough to stop.

    Parameters
    ----------
    phibars : sequence of float
        Residual estimates of the current phase, starting with the initial one.
    floor : float
        Stop when the latest decrease drops below this value.
    nu : float
        Stop when ``cvgrate_1 / cvgrate_j`` exceeds this ratio; ``inf``
        disables both tests.

    Returns
    -------
    str or None
        ``"dynamic-rate"``, ``"dynamic-diff"`` or ``None``.
    """
    if math.isinf(nu) or len(phibars) < 3:
        return None
    p0, p1 = phibars[0], phibars[1]
    prev, cur = phibars[-2], phibars[-1]
    rate1 = _rate(p0, p1)
    ratej = _rate(prev, cur)
    if ratej <= 0.0:
        ratio = math.inf
    elif math.isinf(ratej):
        ratio = 0.0
    else:
        ratio = rate1 / ratej
    if ratio > nu:
        return "dynamic-rate"
    if prev - cur < floor:
        return "dynamic-diff"
    return None


def _rate(a, b):
    if b <= 0.0:
        return math.inf if a > 0.0 else 0.0
    if a <= 0.0:
        return 0.0
    return math.log(a / b)


def lsqr_solve(op, rhs, stop=None, phase=0, matvec_offset=0, monitor=None, clock_start=None):
    """Minimize ``||op @ y - rhs||`` by LSQR started from ``y = 0``.

    Parameters
    ----------
    op : LinearOperator
    rhs : ndarray
    stop : StopConfig
    phase : int
        Phase id written into the trace.
    matvec_offset : int
        Added to the cumulative matvec column.
    monitor : callable, optional
        ``monitor(y) -> float`` evaluated each iteration; its value is logged
        as ``relres``. It must not mutate ``y``.

    Returns
    -------
    y : ndarray
    trace : LsqrTrace
    """
    stop = stop or StopConfig()
    rhs = np.asarray(rhs, dtype=float)
    m, n = op.shape
    if rhs.shape != (m,):
        raise ShapeError(f"rhs has shape {rhs.shape}, operator is {op.shape}")
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs must be finite")
    cap = stop.max_iter if stop.max_iter is not None else 4 * n
    t0 = time.perf_counter() if clock_start is None else clock_start
    trace = LsqrTrace()
    base = op.matvecs

    def record(j, phibar, rate, diff, y):
        rel = float(monitor(y)) if monitor is not None else float("nan")
        trace.rows.append(TraceRow(phase, j, float(phibar), rate, diff,
                                   matvec_offset + op.matvecs - base,
                                   1e3 * (time.perf_counter() - t0), rel))

    def finish(reason, y):
        trace.reason = reason
        trace.phase_reasons[phase] = reason
        return y, trace

    y = np.zeros(n)
    beta = float(np.linalg.norm(rhs))
    if beta == 0.0:
        record(0, 0.0, float("nan"), float("nan"), y)
        return finish("exact-zero-rhs", y)
    bnorm = beta
    u = rhs / beta
    v = op.rmatvec(u)
    alpha = float(np.linalg.norm(v))
    record(0, beta, float("nan"), float("nan"), y)
    if alpha == 0.0:
        return finish("gradient-tol", y)
    v = v / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    anorm = 0.0
    phis = [beta]

    for itn in range(1, cap + 1):
        u = op.matvec(v) - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0.0:
            u = u / beta
        anorm = math.sqrt(anorm**2 + alpha**2 + beta**2)
        v = op.rmatvec(u) - beta * v
        alpha = float(np.linalg.norm(v))
        if alpha > 0.0:
            v = v / alpha

        rho = math.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        prev_phibar = phibar
        phibar = s * phibar
        y = y + (phi / rho) * w
        w = v - (theta / rho) * w

        if not (math.isfinite(phibar) and math.isfinite(rho) and np.all(np.isfinite(y))):
            trace.reason = "breakdown"
            raise BreakdownError(f"non-finite value in LSQR at iteration {itn}", trace=trace)

        rate = _rate(prev_phibar, phibar)
        record(itn, phibar, rate, prev_phibar - phibar, y)
        phis.append(phibar)

        rnorm = phibar
        arnorm = alpha * abs(s * phi)
        xnorm = float(np.linalg.norm(y))
        if rnorm == 0.0 or rnorm <= stop.eps * bnorm + stop.eps * anorm * xnorm:
            return finish("residual-tol", y)
        if arnorm <= stop.eps * anorm * rnorm:
            return finish("gradient-tol", y)
        dyn = dynamic_stop_check(phis, stop.floor, stop.nu)
        if dyn is not None:
            return finish(dyn, y)
    return finish("iteration-cap", y)
