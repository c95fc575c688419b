"""
Starting values for the likelihood run.

Two steps: a conditional-covariance proxy path (EWMA or orthogonal GARCH)
and a constrained least-squares fit of (c, A, B) to that path, solved with
the same Bregman-proximal optimizer as the likelihood itself.
"""

import logging
from dataclasses import dataclass

import numpy as np

from vecgarch import matops, model
from vecgarch.constraints import ConstraintConfig, check, default_K, strictly_feasible
from vecgarch.errors import ConfigError, InvalidInputError
from vecgarch.model import Sample, VecParams
from vecgarch.optimizer import LikelihoodObjective, OptimizerConfig, estimate

logger = logging.getLogger(__name__)

__all__ = [
    "CovProxyPath",
    "OlsObjective",
    "default_constraint_config",
    "ewma_path",
    "ogarch_path",
    "ols_objective",
    "canonical_feasible_start",
    "random_feasible_params",
    "fit_ols",
    "preliminary_estimate",
    "pull_inside",
]

RISKMETRICS_LAMBDA = 0.94
BURN_IN = 30
INTERIOR_PULL = 0.05


@dataclass
class CovProxyPath:
    method: str
    H: np.ndarray  # (T, n, n)

    @property
    def h(self):
        idx = matops.sigma_index(self.H.shape[-1])
        return self.H[:, idx.rows, idx.cols]


def _as_sample(sample):
    return sample if isinstance(sample, Sample) else Sample(sample)


def default_constraint_config(sample, **overrides):
    """Constraint configuration scaled to the data.

    ``K`` is four times the Frobenius norm of the sample covariance and
    ``eps_c`` is 1e-4 times the average sample variance, so the feasible
    set does not depend on the units of the returns.
    """
    sample = _as_sample(sample)
    kw = {"K": default_K(sample)}
    var = float(np.trace(sample.covariance())) / sample.n
    kw["eps_c"] = 1e-4 * var
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ConstraintConfig(**kw)


def ewma_path(sample, lam=RISKMETRICS_LAMBDA):
    """H_t = lam H_{t-1} + (1 - lam) z_{t-1} z_{t-1}^T.

    H_1 is the sample covariance of the first min(30, T // 4) observations.
    """
    if not 0.0 < lam < 1.0:
        raise ConfigError("EWMA lambda must lie in (0, 1)")
    z = _as_sample(sample).z
    T, n = z.shape
    m = min(BURN_IN, T // 4)
    if m < 2:
        raise InvalidInputError(f"sample of length {T} is too short for the EWMA burn-in")
    zb = z[:m] - z[:m].mean(axis=0)
    H = np.empty((T, n, n))
    H[0] = zb.T @ zb / m
    outer = z[:, :, None] * z[:, None, :]
    for t in range(1, T):
        H[t] = lam * H[t - 1] + (1.0 - lam) * outer[t - 1]
    return CovProxyPath("ewma", H)


def _fit_univariate(y, opt=None):
    s = Sample(y[:, None])
    cfg = default_constraint_config(s)
    theta0 = canonical_feasible_start(1, cfg, variance=float(np.var(y)))
    obj = LikelihoodObjective(s)
    res = estimate(obj, theta0, cfg, opt)
    fout = model.filter(res.params, obj.sample, check_psd=False)
    return res.params, fout.H[:, 0, 0]


def ogarch_path(sample, n_factors=None, opt=None):
    """Orthogonal GARCH proxy: univariate VEC fits on principal components."""
    sample = _as_sample(sample)
    cov = sample.covariance()
    w, V = np.linalg.eigh(cov)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    if not w[0] > 0:
        raise InvalidInputError("sample covariance is degenerate; use the EWMA proxy instead")
    keep = int(np.sum(w > 1e-10 * w[0])) if n_factors is None else int(n_factors)
    if not 1 <= keep <= sample.n or w[keep - 1] <= 1e-10 * w[0]:
        raise InvalidInputError(
            f"{keep} factors requested but the covariance has too few positive eigenvalues; use EWMA"
        )
    W = V[:, :keep]
    Y = sample.z @ W
    var = np.empty((sample.T, keep))
    for j in range(keep):
        _, var[:, j] = _fit_univariate(Y[:, j], opt)
    H = np.einsum("ik,tk,jk->tij", W, var, W)
    return CovProxyPath("ogarch", H)


class OlsObjective:
    """s(A, B, c) = sum_{t>=2} ||h_t - (c + A eta_{t-1} + B h_{t-1})||^2.

    ``scale`` multiplies value and gradient (the optimizer works on a
    normalized copy of s).
    """

    def __init__(self, sample, proxy, scale=1.0):
        sample = _as_sample(sample)
        if proxy.H.shape[0] != sample.T or proxy.H.shape[1] != sample.n:
            raise InvalidInputError("proxy path does not match the sample")
        idx = matops.sigma_index(sample.n)
        z = sample.z
        eta = (z[:, :, None] * z[:, None, :])[:, idx.rows, idx.cols]
        h = proxy.h
        self.target = h[1:]
        self.eta_lag = eta[:-1]
        self.h_lag = h[:-1]
        self.N = h.shape[1]
        self.scale = float(scale)
        self.grad_calls = 0
        self.func_calls = 0

    def residuals(self, params):
        pred = params.c + self.eta_lag @ params.A.T + self.h_lag @ params.B.T
        return self.target - pred

    def value(self, params):
        self.func_calls += 1
        r = self.residuals(params)
        return self.scale * float(np.sum(r * r))

    def grad(self, params):
        self.grad_calls += 1
        r = self.residuals(params)
        gA = -2.0 * r.T @ self.eta_lag
        gB = -2.0 * r.T @ self.h_lag
        gc = -2.0 * r.sum(axis=0)
        return self.scale * np.concatenate([matops.vec(gA), matops.vec(gB), gc])

    def total_sum_of_squares(self):
        return float(np.sum(self.target * self.target))


def ols_objective(sample, proxy):
    return OlsObjective(sample, proxy)


def canonical_feasible_start(n, cfg, variance=1.0, a=0.05, b=0.85):
    """Strictly feasible start with Sigma(A) = a' I, Sigma(B) = b' I.

    (a', b') = s (a, b) with s = min(1, 0.95 / ((a + b) n)) so that
    sigma_max(A + B) = (a' + b') n < 1, and math(c) = v I targets a
    stationary covariance of ``variance * I``.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    unit = matops.sigma_inv(np.eye(n * n))
    s = min(1.0, 0.95 / ((a + b) * n))
    for _ in range(200):
        ae, be = a * s, b * s
        v = max(2.0 * cfg.eps_c, variance * (1.0 - (ae + be) * n))
        v = min(v, 0.5 * cfg.K)
        p = VecParams(c=matops.vech(v * np.eye(n)), A=ae * unit, B=be * unit)
        if strictly_feasible(p, cfg) and check(p, cfg).min_margin > 0:
            return p
        rep = check(p, cfg)
        if rep.pc_A_margin <= 0 or rep.pc_B_margin <= 0:
            raise ConfigError("eps_A / eps_B too large for the canonical start")
        s *= 0.9
    raise ConfigError("could not build a feasible start; check K and eps_c")


def _product_psd(n, rank, rng):
    S = np.zeros((n * n, n * n))
    for _ in range(rank):
        a = rng.standard_normal(n)
        v = np.kron(a, a)
        S += np.outer(v, v) / float(v @ v)
    return S


def random_feasible_params(n, cfg, rng, persistence=0.9, a_share=0.1, rank=None, variance=None):
    """Random strictly feasible parameters.

    Sigma(A) and Sigma(B) are sums of rank-one terms (a (x) a)(a (x) a)^T,
    which are n-symmetric and PSD, plus a multiple of the identity that
    clears the eps_A / eps_B offsets.
    """
    rng = np.random.default_rng(rng)
    N = matops.half_dim(n)
    rank = N if rank is None else rank
    unit = matops.sigma_inv(np.eye(n * n)) / n  # unit spectral norm, Sigma = I / n

    def block(target_norm, eps):
        lift = 3.0 * eps * n
        core = matops.sigma_inv(_product_psd(n, rank, rng))
        core /= np.linalg.norm(core, 2)
        return max(target_norm - lift, 0.0) * core + lift * unit

    A = block(a_share * persistence, cfg.eps_A)
    B = block((1.0 - a_share) * persistence, cfg.eps_B)
    if variance is None:
        variance = min(1.0, 0.25 * cfg.K)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    C = (Q * rng.uniform(0.5, 1.5, n)) @ Q.T
    C = 0.5 * (C + C.T) * variance * (1.0 - persistence)
    C += 2.0 * cfg.eps_c * np.eye(n)
    p = VecParams(c=matops.vech(C), A=A, B=B)
    if not strictly_feasible(p, cfg):
        raise ConfigError("random construction is infeasible under this configuration")
    return p


def fit_ols(sample, proxy, cfg, theta0=None, opt=None):
    """Constrained least-squares fit of (c, A, B) to a proxy path.

    The objective is normalized by the total sum of squares of the proxy
    so the default tolerances are scale free.  The model of a quadratic
    objective is nearly exact, so the penalty strength would otherwise
    halve at every step until the barriers stop steering the iterates
    away from the boundary; the default floor ``L_min = 1e-6`` prevents
    that and, being a proximal weight, does not bias the fixed point.
    """
    sample = _as_sample(sample)
    raw = OlsObjective(sample, proxy)
    tss = raw.total_sum_of_squares()
    obj = OlsObjective(sample, proxy, scale=1.0 / tss if tss > 0 else 1.0)
    if theta0 is None:
        var = float(np.trace(sample.covariance())) / sample.n
        theta0 = canonical_feasible_start(sample.n, cfg, variance=var)
    if opt is None:
        opt = OptimizerConfig(f_tol=1e-12, f_tol_rel=1e-10, g_tol=1e-9, L_min=1e-6)
    return estimate(obj, theta0, cfg, opt)


def pull_inside(theta, anchor, kappa):
    """Convex combination (1 - kappa) theta + kappa anchor.

    The constraint set is convex, so the result keeps at least ``kappa``
    times the margins of a strictly feasible ``anchor``.
    """
    x = (1.0 - kappa) * theta.flat() + kappa * anchor.flat()
    return VecParams.from_flat(x, theta.N)


def preliminary_estimate(sample, method="ogarch", cfg=None, lam=RISKMETRICS_LAMBDA, opt=None,
                         interior=INTERIOR_PULL):
    """Starting value for the likelihood run: proxy path, then constrained OLS.

    Least-squares fits typically end on the boundary of the constraint set,
    where the barriers would freeze the likelihood run; the fit is therefore
    moved a fraction ``interior`` of the way toward the canonical start.
    """
    sample = _as_sample(sample)
    cfg = default_constraint_config(sample) if cfg is None else cfg
    if method == "ewma":
        proxy = ewma_path(sample, lam)
    elif method == "ogarch":
        proxy = ogarch_path(sample)
    else:
        raise ConfigError(f"unknown preliminary method {method!r}")
    var = float(np.trace(sample.covariance())) / sample.n
    start = canonical_feasible_start(sample.n, cfg, variance=var)
    res = fit_ols(sample, proxy, cfg, theta0=start, opt=opt)
    logger.info("preliminary OLS: %s after %d iterations", res.reason, res.iterations)
    if interior <= 0:
        return res.params
    return pull_inside(res.params, start, interior)
