"""The adaptive solver: CUR growth interleaved with preconditioned LSQR phases."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cur import grow, init_state
from .errors import ConfigError, RankDeficientError, SingularMatrixError
from .lsqr import LinearOperator, LsqrTrace, StopConfig, lsqr_solve
from .matrix import AugmentedOperator, MatrixTarget, chol_gram, thin_qr, to_dense
from .preconditioner import (
    IdentityPreconditioner,
    QrAccumulator,
    augment_qr,
    build_svd_precond,
    build_svdfree_precond,
)

logger = logging.getLogger(__name__)

VARIANTS = ("svd", "svd-free")


@dataclass
class SolverConfig:
    """Parameters of one adaptive solve.

    ``None`` fields are resolved against the problem by :meth:`resolve`:
    ``mu`` from the problem, ``block`` to ``max(1, n // 50)``, ``eps_cur`` to
    ``30 * mu`` and ``max_iter`` (per LSQR phase) to ``4 n``.
    """

    mu: float = None
    block: int = None
    eps_cur: float = None
    eps_lsqr: float = 1e-10
    nu_prec: float = 10.0
    nu_lsqr: float = 100.0
    variant: str = "svd"
    xi: int = 8
    probes: int = 10
    max_iter: int = None
    seed: int = 0
    core_method: str = "qr"
    monitor_stride: int = 0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if not self.nu_prec > 1:
            raise ConfigError("nu_prec must exceed 1")
        if not self.nu_lsqr > 1:
            raise ConfigError("nu_lsqr must exceed 1")
        if self.block is not None and self.block < 1:
            raise ConfigError("block size must be >= 1")
        if self.eps_cur is not None and self.eps_cur < 0:
            raise ConfigError("eps_cur must be nonnegative")
        if self.mu is not None and self.mu < 0:
            raise ConfigError("mu must be nonnegative")
        if not self.eps_lsqr > 0:
            raise ConfigError("eps_lsqr must be positive")
        if self.xi < 1 or self.probes < 1:
            raise ConfigError("xi and probes must be >= 1")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.core_method not in ("qr", "lu"):
            raise ConfigError("core_method must be 'qr' or 'lu'")
        if self.monitor_stride < 0:
            raise ConfigError("monitor_stride must be >= 0")
        return self

    def resolve(self, n, mu):
        cfg = replace(self)
        if cfg.mu is None:
            cfg.mu = float(mu)
        if cfg.block is None:
            cfg.block = max(1, n // 50)
        if cfg.eps_cur is None:
            cfg.eps_cur = 30.0 * cfg.mu
        if cfg.max_iter is None:
            cfg.max_iter = 4 * n
        cfg.validate()
        if cfg.block > n:
            raise ConfigError(f"block size {cfg.block} exceeds n = {n}")
        return cfg


@dataclass
class PhaseReport:
    """One preconditioner rebuild followed by one LSQR phase."""

    phase: int
    rank: int
    rho: float
    level: float
    floor: float
    iterations: int
    reason: str
    nu_lsqr: float
    relres: float
    aug_residual: float
    matvecs: int
    times: dict = field(default_factory=dict)


@dataclass
class SolveResult:
    x: np.ndarray
    reports: list
    trace: LsqrTrace
    status: str
    config: SolverConfig
    rank: int
    rho: float
    rho_history: list
    matvecs: int
    sketch_applications: int
    times: dict
    preconditioner: object = None
    warnings: list = field(default_factory=list)

    @property
    def phases(self):
        return len(self.reports)

    def to_dict(self, with_time=True):
        cfg = asdict(self.config)
        reps = []
        for r in self.reports:
            d = asdict(r)
            if not with_time:
                d.pop("times")
            reps.append(d)
        out = {"status": self.status, "config": cfg, "phases": reps, "rank": self.rank,
               "rho": self.rho, "rho_history": list(self.rho_history),
               "matvecs": self.matvecs, "sketch_applications": self.sketch_applications,
               "warnings": list(self.warnings)}
        if with_time:
            out["times"] = dict(self.times)
        return out

    def to_json(self, with_time=True):
        return json.dumps(_jsonable(self.to_dict(with_time)), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def reprecondition_check(d_cur, rho, eps_cur, nu_prec):
    """Whether the CUR improvement since the last rebuild warrants a new preconditioner.

    Triggers when ``rho <= eps_cur`` (final phase) or when
    ``d_cur / (rho - eps_cur) >= nu_prec``; ``d_cur = inf`` always triggers.
    """
    gap = rho - eps_cur
    if gap <= 0:
        return True
    if math.isinf(d_cur):
        return True
    return d_cur / gap >= nu_prec


class _Clock:
    def __init__(self):
        self.totals = {"augment": 0.0, "factor": 0.0, "precond": 0.0, "lsqr": 0.0}
        self.phase = dict.fromkeys(self.totals, 0.0)

    def add(self, key, dt):
        self.totals[key] += dt
        self.phase[key] += dt

    def take_phase(self):
        out, self.phase = self.phase, dict.fromkeys(self.totals, 0.0)
        return out


def solve(problem, config=None):
    """Adaptively preconditioned LSQR for ``min ||A x - b||^2 + mu^2 ||x||^2``.

    Parameters
    ----------
    problem : ProblemInstance
        Anything with ``A``, ``b`` and ``mu`` attributes.
    config : SolverConfig, optional

    Returns
    -------
    SolveResult
        ``status`` is ``"converged"`` when the CUR tolerance was met, or
        ``"rank-exhausted"`` / ``"singular-core"`` when growth stopped first;
        the latter two still return the best iterate after a final phase
        with dynamic stopping disabled.
    """
    config = config or SolverConfig()
    t_start = time.perf_counter()
    base = MatrixTarget(problem.A)
    A = base.A
    m, n = A.shape
    b = np.asarray(problem.b, dtype=float).ravel()
    cfg = config.resolve(n, getattr(problem, "mu", 0.0))
    mu = cfg.mu

    if mu > 0:
        system = AugmentedOperator(A, mu)
        b_aug = np.concatenate([b, np.zeros(n)])
    else:
        system = base
        b_aug = b
    cur_target = system if cfg.variant == "svd-free" else base
    clock = _Clock()

    t0 = time.perf_counter()
    state = init_state(cur_target, cfg.block, seed=cfg.seed, xi=cfg.xi, probes=cfg.probes,
                       core_method=cfg.core_method)
    clock.add("augment", time.perf_counter() - t0)

    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n)
    trace = LsqrTrace()
    reports = []
    warnings = []
    acc = QrAccumulator.empty(n)
    d_cur = math.inf
    nu_lsqr = cfg.nu_lsqr
    matvecs = 0
    status = None
    precond = IdentityPreconditioner()

    def relres(v):
        r = base.matvec(v) - b
        return float(np.linalg.norm(r) / bnorm) if bnorm > 0 else float(np.linalg.norm(r))

    def run_phase(P, floor, nu):
        nonlocal x, matvecs
        t0 = time.perf_counter()
        rhs = b_aug - system.matvec(x)
        matvecs += 1
        op = LinearOperator.preconditioned(system, P)
        stride = cfg.monitor_stride
        monitor = None
        if stride:
            x_base = x.copy()
            cache = {"k": 0}

            def monitor(y):
                k = cache["k"]
                cache["k"] = k + 1
                if k % stride:
                    return float("nan")
                return relres(x_base + P.apply_inv(y))

        stop = StopConfig(eps=cfg.eps_lsqr, nu=nu, floor=floor, max_iter=cfg.max_iter)
        y, ptrace = lsqr_solve(op, rhs, stop, phase=len(reports), matvec_offset=matvecs,
                               monitor=monitor, clock_start=t_start)
        matvecs += op.matvecs
        x = x + P.apply_inv(y)
        trace.extend(ptrace)
        clock.add("lsqr", time.perf_counter() - t0)
        return ptrace

    def rebuild():
        t0 = time.perf_counter()
        factors = state.factors()
        T_C = chol_gram(factors.C, method="householder")
        clock.add("factor", time.perf_counter() - t0)
        t0 = time.perf_counter()
        if cfg.variant == "svd":
            P = build_svd_precond(factors, mu, Q_R=acc.Q, T_R=acc.T, T_C=T_C)
            floor = float(P.sigma[-1])
        else:
            P = build_svdfree_precond(factors, state.rho, Q_R=acc.Q, T_R=acc.T, T_C=T_C)
            floor = float(state.rho)
        clock.add("precond", time.perf_counter() - t0)
        return P, floor

    def report(P, floor, nu, ptrace):
        r_aug = float(np.linalg.norm(b_aug - system.matvec(x)))
        reports.append(PhaseReport(
            phase=len(reports), rank=state.rank, rho=float(state.rho),
            level=float(P.level), floor=floor, iterations=len(ptrace.rows) - 1,
            reason=ptrace.reason, nu_lsqr=nu, relres=relres(x), aug_residual=r_aug,
            matvecs=matvecs, times=clock.take_phase()))

    while True:
        t0 = time.perf_counter()
        try:
            added = grow(state)
        except SingularMatrixError as exc:
            clock.add("augment", time.perf_counter() - t0)
            status = "singular-core"
            warnings.append(str(exc))
            break
        clock.add("augment", time.perf_counter() - t0)
        if added == 0:
            status = "rank-exhausted"
            warnings.append(f"CUR growth stopped at rank {state.rank} with rho={state.rho:.3e}")
            break

        t0 = time.perf_counter()
        try:
            newrows = to_dense(state.R[state.rank - added:, :]).T
            acc = augment_qr(acc, newrows)
        except RankDeficientError:
            Q, T = thin_qr(to_dense(state.R).T, rtol=0.0)
            acc = QrAccumulator(Q, T)
        clock.add("factor", time.perf_counter() - t0)

        rho = state.rho
        if reprecondition_check(d_cur, rho, cfg.eps_cur, cfg.nu_prec):
            done = rho <= cfg.eps_cur
            if done:
                nu_lsqr = math.inf
            P, floor = rebuild()
            precond = P
            ptrace = run_phase(P, floor, nu_lsqr)
            report(P, floor, nu_lsqr, ptrace)
            d_cur = rho - cfg.eps_cur
            if done:
                status = "converged"
                break

    if status != "converged":
        logger.warning("solve ended with status %s: %s", status, "; ".join(warnings))
        if state.rank > 0:
            P, floor = rebuild()
        else:
            P, floor = IdentityPreconditioner(), 0.0
        precond = P
        ptrace = run_phase(P, floor, math.inf)
        report(P, floor, math.inf, ptrace)

    clock.totals["total"] = time.perf_counter() - t_start
    return SolveResult(x=x, reports=reports, trace=trace, status=status, config=cfg,
                       rank=state.rank, rho=float(state.rho),
                       rho_history=list(state.rho_history), matvecs=matvecs,
                       sketch_applications=state.sketch_applications, times=clock.totals,
                       preconditioner=precond, warnings=warnings)


@dataclass
class BaselineResult:
    x: np.ndarray
    trace: LsqrTrace
    matvecs: int
    relres: float
    status: str


def plain_lsqr(problem, mu=None, eps=1e-10, max_iter=None, monitor_stride=0):
    """Unpreconditioned LSQR on the augmented system, capped at ``4 n`` iterations."""
    base = MatrixTarget(problem.A)
    m, n = base.shape
    b = np.asarray(problem.b, dtype=float).ravel()
    mu = getattr(problem, "mu", 0.0) if mu is None else mu
    system = AugmentedOperator(base.A, mu) if mu > 0 else base
    b_aug = np.concatenate([b, np.zeros(n)]) if mu > 0 else b
    bnorm = float(np.linalg.norm(b))
    op = LinearOperator(system.shape, system.matvec, system.rmatvec)
    monitor = None
    if monitor_stride:
        cache = {"k": 0}

        def monitor(y):
            k = cache["k"]
            cache["k"] = k + 1
            if k % monitor_stride:
                return float("nan")
            return float(np.linalg.norm(base.matvec(y) - b) / bnorm)

    stop = StopConfig(eps=eps, nu=math.inf, max_iter=max_iter or 4 * n)
    y, trace = lsqr_solve(op, b_aug, stop, monitor=monitor)
    rel = float(np.linalg.norm(base.matvec(y) - b) / bnorm) if bnorm > 0 else 0.0
    return BaselineResult(y, trace, op.matvecs, rel, trace.reason)
