"""
Outer loop of the estimator: Bregman-proximal steps with a BFGS curvature
proxy and trust-region control of the penalty strength L.

An objective is any object with ``value(params)`` and ``grad(params)``
(flat layout ``[vec(A); vec(B); c]``) plus ``grad_calls`` / ``func_calls``
counters.  :class:`LikelihoodObjective` wraps the quasi-likelihood.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from vecgarch import model
from vecgarch.bregman import LocalModel, newton_solve
from vecgarch.constraints import check, strictly_feasible
from vecgarch.errors import ConfigError, ConstraintError, LikelihoodError, PositivityError

logger = logging.getLogger(__name__)

__all__ = [
    "BfgsState",
    "bfgs_update",
    "initial_bfgs",
    "adequacy_ratio",
    "StepDecision",
    "step_decision",
    "OptimizerConfig",
    "IterationRecord",
    "EstimationResult",
    "LikelihoodObjective",
    "estimate",
]

CURVATURE_GUARD = 1e-10


@dataclass
class BfgsState:
    H: np.ndarray
    x_prev: np.ndarray
    g_prev: np.ndarray
    n_updates: int = 0
    n_skipped: int = 0


def initial_bfgs(x0, f0, g0):
    """Identity proxy scaled by max(1, |f0|) / (1 + ||g0||)."""
    x0 = np.asarray(x0, dtype=float)
    scale = max(1.0, abs(f0)) / (1.0 + float(np.linalg.norm(g0)))
    return BfgsState(H=scale * np.eye(x0.size), x_prev=x0.copy(), g_prev=np.asarray(g0, dtype=float).copy())


def bfgs_update(state, x_new, g_new):
    """Rank-two BFGS update; skipped when the curvature condition fails."""
    x_new = np.asarray(x_new, dtype=float)
    g_new = np.asarray(g_new, dtype=float)
    s = x_new - state.x_prev
    y = g_new - state.g_prev
    H = state.H
    ys = float(y @ s)
    Hs = H @ s
    sHs = float(s @ Hs)
    if ys <= CURVATURE_GUARD * np.linalg.norm(y) * np.linalg.norm(s) or sHs <= 0.0:
        return BfgsState(H, x_new.copy(), g_new.copy(), state.n_updates, state.n_skipped + 1)
    Hn = H + np.outer(y, y) / ys - np.outer(Hs, Hs) / sHs
    Hn = 0.5 * (Hn + Hn.T)
    return BfgsState(Hn, x_new.copy(), g_new.copy(), state.n_updates + 1, state.n_skipped)


def adequacy_ratio(f_prev, f_new, model_prev, model_new):
    """Actual over predicted decrease; 1 when the prediction is negligible."""
    den = model_new - model_prev
    if not np.isfinite(f_new):
        return -np.inf
    if abs(den) < 1e-14 * (1.0 + abs(f_prev)):
        return 1.0
    return (f_new - f_prev) / den


class StepDecision:
    REJECT_DOUBLE = "reject+double"
    ACCEPT_KEEP = "accept+keep"
    ACCEPT_HALVE = "accept+halve"


def step_decision(rho):
    if not rho >= 0.01:
        return StepDecision.REJECT_DOUBLE
    if rho <= 0.9:
        return StepDecision.ACCEPT_KEEP
    return StepDecision.ACCEPT_HALVE


@dataclass
class OptimizerConfig:
    f_tol: float = 1e-5
    f_tol_rel: float = 0.0
    g_tol: float = 1e-6
    max_iter: int = 500
    max_rejections: int = 25
    L0: float = 1.0
    L_min: float = 1e-12
    L_max: float = 1e12
    use_bfgs: bool = True
    full_model_ratio: bool = False
    inner_max_iter: int = 50
    inner_tol: float = 1e-8
    keep_inner_iterates: bool = False

    def __post_init__(self):
        if not (0 < self.L_min <= self.L0 <= self.L_max):
            raise ConfigError("need 0 < L_min <= L0 <= L_max")
        if self.f_tol < 0 or self.f_tol_rel < 0 or self.g_tol < 0:
            raise ConfigError("tolerances must be nonnegative")
        if self.max_iter < 1 or self.max_rejections < 1 or self.inner_max_iter < 1:
            raise ConfigError("iteration caps must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    f: float
    f_trial: float
    rho: float
    L: float
    grad_norm: float
    min_margin: float
    decision: str
    inner_iterations: int
    inner_converged: bool
    grad_calls: int
    wall_time: float

    def as_line(self):
        return (
            f"{self.iteration}\t{self.f:.17g}\t{self.f_trial:.17g}\t{self.rho:.6g}\t{self.L:.6g}\t"
            f"{self.grad_norm:.6g}\t{self.min_margin:.6g}\t{self.decision}\t"
            f"{self.inner_iterations}\t{int(self.inner_converged)}\t{self.grad_calls}\t{self.wall_time:.6f}"
        )

    HEADER = (
        "iteration\tf\tf_trial\trho\tL\tgrad_norm\tmin_margin\tdecision\t"
        "inner_iterations\tinner_converged\tgrad_calls\twall_time"
    )


@dataclass
class EstimationResult:
    params: model.VecParams
    f: float
    converged: bool
    reason: str
    iterations: int
    n_accepted: int
    n_rejected: int
    grad_calls: int
    func_calls: int
    wall_time: float
    L_final: float
    L_bound_hit: bool = False
    trace: list = field(default_factory=list)
    inner_iterates: list = field(default_factory=list)

    def accepted_values(self):
        out = [self.trace[0].f] if self.trace else []
        out += [r.f_trial for r in self.trace if r.decision != StepDecision.REJECT_DOUBLE]
        return out


class LikelihoodObjective:
    """f = -log L on a fixed sample.

    Unless the sample carries a presample, it is frozen at z0 = 0 and H0 =
    sample covariance so that the objective does not move the initial
    condition with the parameters.
    """

    def __init__(self, sample, grad="closed", k_trunc=None):
        if grad not in ("closed", "recursive"):
            raise ConfigError(f"unknown gradient backend {grad!r}")
        if sample.H0 is None or sample.z0 is None:
            z0 = np.zeros(sample.n) if sample.z0 is None else sample.z0
            H0 = sample.covariance() if sample.H0 is None else sample.H0
            sample = sample.with_presample(z0=z0, H0=H0)
        self.sample = sample
        self.grad_backend = grad
        self.k_trunc = k_trunc
        self.grad_calls = 0
        self.func_calls = 0
        self._cache_key = None
        self._cache_fout = None

    def _filter(self, params):
        key = params.flat().tobytes()
        if key != self._cache_key:
            self._cache_fout = model.filter(params, self.sample, check_psd=False)
            self._cache_key = key
        return self._cache_fout

    def value(self, params):
        self.func_calls += 1
        return model.neg_loglik(params, self.sample, fout=self._filter(params))

    def grad(self, params):
        self.grad_calls += 1
        fout = self._filter(params)
        if self.grad_backend == "closed":
            g = model.grad_closed_form(params, self.sample, fout=fout)
        else:
            g = model.grad_recursive(params, self.sample, k_trunc=self.k_trunc, fout=fout)
        return -g.flat()


_EVAL_ERRORS = (LikelihoodError, PositivityError, FloatingPointError, np.linalg.LinAlgError)


def estimate(objective, theta0, cfg, opt=None, callback=None):
    """Minimize ``objective`` over the constraint set starting at ``theta0``.

    Parameters
    ----------
    objective : object
        Provides ``value``/``grad`` and call counters.
    theta0 : VecParams
        Strictly feasible starting point (see :mod:`vecgarch.prelim`).
    cfg : ConstraintConfig
    opt : OptimizerConfig, optional
    callback : callable, optional
        Called with every :class:`IterationRecord`.
    """
    opt = OptimizerConfig() if opt is None else opt
    if not strictly_feasible(theta0, cfg):
        raise ConstraintError(
            "starting point is not strictly feasible; use vecgarch.prelim to build one"
        )
    t_start = time.perf_counter()
    p = theta0
    x = p.flat()
    f = objective.value(p)
    if not np.isfinite(f):
        raise ConstraintError("objective is not finite at the starting point")
    g = objective.grad(p)
    bfgs = initial_bfgs(x, f, g) if opt.use_bfgs else None
    L = opt.L0
    L_hit = False
    rejections = 0
    n_acc = n_rej = 0
    trace = []
    inner_iterates = []
    reason = "max_iter"
    converged = False
    it = 0
    for it in range(1, opt.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        f_before = f
        if gnorm <= opt.g_tol * (1.0 + abs(f)):
            reason, converged = "gradient", True
            it -= 1
            break
        H = bfgs.H if bfgs is not None else None
        lm = LocalModel(p, f, g, cfg, L=L, H=H)
        nr = newton_solve(lm, max_iter=opt.inner_max_iter, tol=opt.inner_tol,
                          keep_iterates=opt.keep_inner_iterates)
        if opt.keep_inner_iterates:
            inner_iterates.extend(nr.iterates)
        p_new = nr.params
        x_new = p_new.flat()
        s = x_new - x
        if opt.full_model_ratio:
            den = nr.value - f
        else:
            den = float(g @ s) + (lm.quad(x_new) if H is not None else 0.0)
        try:
            f_new = objective.value(p_new)
        except _EVAL_ERRORS as exc:
            logger.debug("trial point rejected: %s", exc)
            f_new = np.inf
        rho = adequacy_ratio(f, f_new, 0.0, den)
        decision = step_decision(rho)
        if abs(den) < 1e-14 * (1.0 + abs(f)) and decision != StepDecision.REJECT_DOUBLE:
            # negligible predicted decrease: accept, keep L
            decision = StepDecision.ACCEPT_KEEP
        if decision != StepDecision.REJECT_DOUBLE and not f_new <= f:
            decision = StepDecision.REJECT_DOUBLE
        if not np.any(s):
            # the inner solver could not move; a stronger penalty bends its direction
            decision = StepDecision.REJECT_DOUBLE
        L_used = L
        if decision == StepDecision.REJECT_DOUBLE:
            n_rej += 1
            rejections += 1
            L = 2.0 * L
        else:
            n_acc += 1
            rejections = 0
            df = f_new - f
            g_new = objective.grad(p_new)
            if bfgs is not None:
                bfgs = bfgs_update(bfgs, x_new, g_new)
            p, x, f, g = p_new, x_new, f_new, g_new
            if decision == StepDecision.ACCEPT_HALVE:
                L = 0.5 * L
        if L > opt.L_max or L < opt.L_min:
            if not L_hit:
                logger.info("penalty strength L=%g left [%g, %g]", L, opt.L_min, opt.L_max)
            L_hit = True
            L = min(max(L, opt.L_min), opt.L_max)
        rec = IterationRecord(
            iteration=it,
            f=f_before,
            f_trial=f_new,
            rho=rho,
            L=L_used,
            grad_norm=gnorm,
            min_margin=check(p, cfg).min_margin,
            decision=decision,
            inner_iterations=nr.iterations,
            inner_converged=nr.converged,
            grad_calls=objective.grad_calls,
            wall_time=time.perf_counter() - t_start,
        )
        trace.append(rec)
        if callback is not None:
            callback(rec)
        if decision != StepDecision.REJECT_DOUBLE:
            if abs(df) <= opt.f_tol + opt.f_tol_rel * abs(f):
                reason, converged = "f_tol", True
                break
        elif rejections >= opt.max_rejections:
            reason = "rejections"
            break
    return EstimationResult(
        params=p,
        f=f,
        converged=converged,
        reason=reason,
        iterations=it,
        n_accepted=n_acc,
        n_rejected=n_rej,
        grad_calls=objective.grad_calls,
        func_calls=objective.func_calls,
        wall_time=time.perf_counter() - t_start,
        L_final=L,
        L_bound_hit=L_hit,
        trace=trace,
        inner_iterates=inner_iterates,
    )
