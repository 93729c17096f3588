"""Fixed- and adaptive-step drivers with basis-size strategies.

A run rebuilds the Krylov basis from ``f(y_n)`` at every step attempt. The
basis size comes from a :class:`BasisStrategy`: a fixed ``m``, a fixed
first-stage residual tolerance, or a residual tolerance tied to the
controller's ``rel_tol``. Rejected attempts discard their basis.
"""
from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import (MaxStepsExceeded, NonFiniteState, SeriousBreakdown, SingularSystem,
                     StepsizeUnderflow, ValidationError)
from .integrator import reduced_step
from .krylov import arnoldi, arnoldi_adaptive, lanczos_biorth, lanczos_biorth_adaptive
from .problems import autonomize

log = logging.getLogger(__name__)

KINDS = ("fixed", "residual", "tol_matched")
METHODS = ("borok", "rok")


@dataclass(frozen=True)
class BasisStrategy:
    kind: str = "fixed"
    m: int | None = 4
    res_tol: float | None = None
    extension: bool = False
    m_min: int | None = None
    m_max: int = 100

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}", "kind")
        if self.kind == "fixed":
            if self.m is None or self.m < 1:
                raise ValidationError("fixed strategy needs m >= 1", "m")
            if self.m_min is not None and self.m < self.m_min:
                raise ValidationError("fixed m below m_min", "m")
        if self.kind == "residual" and not (self.res_tol is not None and self.res_tol > 0):
            raise ValidationError("residual strategy needs res_tol > 0", "res_tol")
        if self.m_min is not None and self.m_max < self.m_min:
            raise ValidationError("m_max below m_min", "m_max")

    @classmethod
    def fixed(cls, m, extension=False):
        return cls("fixed", m=m, extension=extension)

    @classmethod
    def residual(cls, res_tol, extension=False, m_min=None, m_max=100):
        return cls("residual", m=None, res_tol=res_tol, extension=extension, m_min=m_min, m_max=m_max)

    @classmethod
    def tol_matched(cls, extension=False, m_min=None, m_max=100):
        return cls("tol_matched", m=None, extension=extension, m_min=m_min, m_max=m_max)


@dataclass
class ControllerConfig:
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    safety: float = 0.9
    fac_min: float = 0.2
    fac_max: float = 5.0
    h_init: float | None = None
    h_min: float = 1e-14
    h_max: float = math.inf
    max_steps: int = 100_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol >= 0):
            raise ValidationError("tolerances must be positive", "abs_tol")
        if not 0 < self.safety <= 1:
            raise ValidationError("must lie in (0, 1]", "safety")
        if not self.fac_min < 1 < self.fac_max:
            raise ValidationError("need fac_min < 1 < fac_max", "fac_min")
        if self.h_init is not None and not self.h_min <= self.h_init <= self.h_max:
            raise ValidationError("need h_min <= h_init <= h_max", "h_init")


@dataclass
class RunStats:
    steps_accepted: int = 0
    steps_rejected: int = 0
    rhs_evals: int = 0
    matvecs: int = 0
    tmatvecs: int = 0
    basis_size_histogram: Counter = field(default_factory=Counter)
    wall_time: float = 0.0
    final_error: float | None = None
    lucky_breakdowns: int = 0
    serious_breakdowns: int = 0
    max_size_hits: int = 0
    failed_attempts: int = 0
    ext_skipped: int = 0
    first_residuals: list = field(default_factory=list)
    accepted_h: list = field(default_factory=list)

    @property
    def builds(self):
        return sum(self.basis_size_histogram.values())


def error_norm(y_new, err_vec, cfg):
    """Weighted RMS norm ``sqrt(mean((err / (atol + rtol |y_new|))^2))``.

    Non-finite input gives ``inf`` so the step is rejected.
    """
    err_vec = np.asarray(err_vec)
    if not (np.all(np.isfinite(err_vec)) and np.all(np.isfinite(y_new))):
        return math.inf
    if err_vec.size == 0:
        return 0.0
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y_new)
    return float(np.sqrt(np.mean((err_vec / scale) ** 2)))


def next_stepsize(h, err, p_hat, cfg):
    """Elementary controller: accept when ``err <= 1``.

    ``h_new = h * clamp(safety * err^(-1/(p_hat+1)), fac_min, fac_max)``,
    then clamped to ``[h_min, h_max]``.

    Raises
    ------
    StepsizeUnderflow
        When a rejected step would need ``h_new < h_min``.
    """
    accept = err <= 1.0
    if err == 0.0:
        factor = cfg.fac_max
    elif not math.isfinite(err):
        factor = cfg.fac_min
    else:
        factor = min(cfg.fac_max, max(cfg.fac_min, cfg.safety * err ** (-1.0 / (p_hat + 1))))
    h_new = h * factor
    if not accept and h_new < cfg.h_min:
        raise StepsizeUnderflow(f"step size {h_new:.3e} below h_min = {cfg.h_min:.3e}")
    return accept, min(cfg.h_max, max(cfg.h_min, h_new))


def build_basis(method, strategy, jac, f0, h, gamma, res_tol, m_min):
    """Basis for one step attempt; a serious Lanczos breakdown yields the partial basis."""
    if method not in METHODS:
        raise ValidationError(f"unknown integrator {method!r}", "integrator")
    if strategy.kind == "fixed":
        build = lanczos_biorth if method == "borok" else arnoldi
        try:
            return build(jac, f0, strategy.m)
        except SeriousBreakdown as exc:
            return exc.basis
    build = lanczos_biorth_adaptive if method == "borok" else arnoldi_adaptive
    m_max = max(strategy.m_max, m_min)
    try:
        return build(jac, f0, h, gamma, res_tol, m_min=m_min, m_max=m_max)
    except SeriousBreakdown as exc:
        return exc.basis


class _Stepper:
    """One step attempt at ``(t, y)`` with step size ``h``, with cost bookkeeping."""

    def __init__(self, problem, tableau, strategy, method, stats, norm=None):
        if strategy.extension and method != "borok":
            raise ValidationError("subspace extension is only defined for the biorthogonal method",
                                  "extension")
        self.problem = problem
        self.tableau = tableau
        self.strategy = strategy
        self.method = method
        self.stats = stats
        self.norm = norm
        self.m_min = strategy.m_min if strategy.m_min is not None else tableau.order_p

    def attempt(self, t, y, h, res_tol=None):
        st = self.stats
        f0 = self.problem.rhs(t, y)
        st.rhs_evals += 1
        if not np.any(f0):
            return None, y.copy()
        jac = self.problem.linearize(t, y)
        tol = self.strategy.res_tol if self.strategy.kind == "residual" else res_tol
        try:
            basis = build_basis(self.method, self.strategy, jac, f0, h,
                                self.tableau.gamma_diag, tol, self.m_min)
            st.basis_size_histogram[basis.m] += 1
            if basis.breakdown == "lucky":
                st.lucky_breakdowns += 1
            elif basis.breakdown == "serious":
                st.serious_breakdowns += 1
            kwargs = dict(f0=f0)
            if self.norm is not None:
                kwargs["norm"] = self.norm
            if self.strategy.extension:
                kwargs.update(extend=True, jac=jac)
            rec = None
            if basis.converged:
                rec = reduced_step(self.problem, self.tableau, basis, y, h, **kwargs)
                st.rhs_evals += rec.rhs_evals
                st.ext_skipped += rec.basis.ext_skipped if hasattr(rec.basis, "ext_skipped") else 0
            else:
                st.max_size_hits += 1
            return (basis, rec), None
        finally:
            st.matvecs += jac.matvec_counter
            st.tmatvecs += jac.tmatvec_counter


def _step_count(t0, tf, h):
    n = math.ceil((tf - t0) / h * (1.0 - 1e-12))
    return max(n, 1)


def integrate_fixed(problem, tableau, strategy, h, method="borok", max_steps=10_000_000):
    """Integrate over ``problem.t_span`` with constant ``h`` (last step shortened).

    For residual strategies a basis that hits ``m_max`` is still used, and
    counted in ``max_size_hits``. Returns ``(y_final, RunStats)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    inner_n = problem.dimension
    prob = autonomize(problem)
    t0, tf = prob.t_span
    n = _step_count(t0, tf, h)
    if n > max_steps:
        raise ValueError(f"{n} steps exceed max_steps = {max_steps}")
    stats = RunStats()
    stepper = _Stepper(prob, tableau, strategy, method, stats)
    clock = time.perf_counter()
    y = prob.y0.copy()
    for step in range(n):
        t = t0 + step * h
        hs = h if step < n - 1 else tf - t
        res_tol = None
        if strategy.kind == "tol_matched":
            raise ValidationError("tol_matched needs an adaptive run", "kind")
        out, same = stepper.attempt(t, y, hs, res_tol)
        if out is None:
            stats.steps_accepted += 1
            continue
        basis, rec = out
        if rec is None:
            # m_max reached: use the largest basis anyway
            rec = reduced_step(prob, tableau, basis, y, hs, f0=prob.rhs(t, y))
            stats.rhs_evals += rec.rhs_evals + 1
        y = rec.y_next
        stats.steps_accepted += 1
        stats.accepted_h.append(hs)
        if basis.first_residual is not None:
            stats.first_residuals.append(basis.first_residual)
    stats.wall_time = time.perf_counter() - clock
    return y[:inner_n], stats


def integrate_adaptive(problem, tableau, strategy, cfg, method="borok"):
    """Adaptive run driven by the embedded error estimate.

    Rejections: ``err > 1``, singular reduced systems, non-finite stages,
    and bases that hit ``m_max`` (the latter halve ``h``). Returns
    ``(y_final, RunStats)``.
    """
    if tableau.b_hat is None:
        raise ValidationError(f"tableau {tableau.name!r} has no embedded weights; "
                              "adaptive stepping needs bhat", "bhat")
    inner_n = problem.dimension
    prob = autonomize(problem)
    t0, tf = prob.t_span
    span = tf - t0
    h = cfg.h_init if cfg.h_init is not None else min(cfg.h_max, max(cfg.h_min, 1e-3 * span))
    stats = RunStats()
    stepper = _Stepper(prob, tableau, strategy, method, stats,
                       norm=lambda yn, ev: error_norm(yn, ev, cfg))
    p_hat = tableau.order_p_hat
    res_tol = cfg.rel_tol if strategy.kind == "tol_matched" else None
    clock = time.perf_counter()
    t = t0
    y = prob.y0.copy()
    while tf - t > 1e-13 * max(1.0, abs(tf)):
        if stats.steps_accepted + stats.steps_rejected >= cfg.max_steps:
            raise MaxStepsExceeded(f"{cfg.max_steps} steps reached at t = {t:.6g}")
        hs = min(h, tf - t)
        if tf - (t + hs) < 1e-10 * hs:
            hs = tf - t
        try:
            out, same = stepper.attempt(t, y, hs, res_tol)
        except (SingularSystem, NonFiniteState) as exc:
            log.debug("attempt at t=%g h=%g failed: %s", t, hs, exc)
            stats.failed_attempts += 1
            stats.steps_rejected += 1
            h = _halve(hs, cfg)
            continue
        if out is None:
            t, y = tf, same
            stats.steps_accepted += 1
            break
        basis, rec = out
        if rec is None:
            stats.steps_rejected += 1
            h = _halve(hs, cfg)
            continue
        accept, h_new = next_stepsize(hs, rec.err_est, p_hat, cfg)
        if accept:
            t += hs
            y = rec.y_next
            stats.steps_accepted += 1
            stats.accepted_h.append(hs)
            if basis.first_residual is not None:
                stats.first_residuals.append(basis.first_residual)
        else:
            stats.steps_rejected += 1
        h = h_new
    stats.wall_time = time.perf_counter() - clock
    return y[:inner_n], stats


def _halve(h, cfg):
    h_new = 0.5 * h
    if h_new < cfg.h_min:
        raise StepsizeUnderflow(f"step size {h_new:.3e} below h_min = {cfg.h_min:.3e}")
    return h_new
