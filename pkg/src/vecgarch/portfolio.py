"""
Portfolio experiments: variance-minimizing weights from conditional
covariance forecasts, proxy-based model comparison and spectral reports.

Returns are log-returns z_t; net returns are x_t = exp(z_t) - 1.  For a
Gaussian log-return with covariance H_t the net returns have covariance
A_t with entries exp((H_t)_ij) - 1 (zero-mean lognormal identity).
"""

from dataclasses import dataclass

import numpy as np

from vecgarch import matops
from vecgarch.errors import DegeneratePortfolioError, InvalidInputError
from vecgarch.model import parameter_count

__all__ = [
    "net_return_cov",
    "min_variance_weights",
    "weights_path",
    "mse_vs_proxy",
    "ModelComparison",
    "r2_ranking",
    "compare_models",
    "SpectrumReport",
    "spectrum_report",
    "planted_perfect_path",
    "parameter_count",
]

NULL_TOL = 1e-10
SUM_REDRAW = 1e-6


def net_return_cov(H, literal=False):
    """A_ij = exp(H_ij) - 1, elementwise; works on a single matrix or a path.

    With ``literal=True`` the exponent is (H H)_ij instead.
    """
    H = np.asarray(H, dtype=float)
    if literal:
        H = H @ H
    A = np.expm1(H)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def min_variance_weights(A):
    """argmin w^T A w subject to sum(w) = 1."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError("covariance must be a square matrix")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    ones = np.ones(n)
    w, V = np.linalg.eigh(A)
    scale = max(abs(w[0]), abs(w[-1]))
    if w[0] <= NULL_TOL * scale:
        null = V[:, w <= NULL_TOL * scale] if scale > 0 else np.eye(n)
        # projecting 1 onto the null space gives the null vector with the largest sum
        u = null @ (null.T @ ones)
        total = float(u.sum())
        if total <= 1e-12 * n:
            raise DegeneratePortfolioError(
                "covariance is singular and its null space is orthogonal to the budget vector"
            )
        return u / total
    x = np.linalg.solve(A, ones)
    s = float(x.sum())
    if s == 0.0:
        raise DegeneratePortfolioError("1^T A^-1 1 vanishes")
    return x / s


def weights_path(A_path):
    return np.array([min_variance_weights(A) for A in A_path])


def mse_vs_proxy(vol_path, returns):
    """Mean over t of ||sigma_t - |r_t|||^2."""
    v = np.asarray(vol_path, dtype=float)
    r = np.asarray(returns, dtype=float)
    if v.shape != r.shape:
        raise InvalidInputError(f"length mismatch: {v.shape} vs {r.shape}")
    d = (v - np.abs(r)) ** 2
    if d.ndim > 1:
        d = d.reshape(d.shape[0], -1).sum(axis=1)
    return float(np.mean(d))


def _r2(x, y):
    """R^2 of the least-squares fit y ~ a + b x."""
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    sxy = float(xc @ yc)
    return sxy * sxy / (sxx * syy)


def _returns(sample):
    z = np.asarray(getattr(sample, "z", sample), dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    return z


@dataclass
class ModelComparison:
    names: list
    wins: np.ndarray
    n_trials: int
    r2: np.ndarray = None  # (n_trials, n_models)
    mse: np.ndarray = None
    realized_var: np.ndarray = None

    @property
    def win_pct(self):
        return 100.0 * self.wins / max(self.n_trials, 1)

    def to_rows(self):
        rows = []
        for k, name in enumerate(self.names):
            row = {"model": name, "wins": int(self.wins[k]), "win_pct": float(self.win_pct[k])}
            if self.mse is not None:
                row["mse"] = float(self.mse[k])
            if self.realized_var is not None:
                row["realized_var"] = float(self.realized_var[k])
            rows.append(row)
        return rows


def _trial_weights(n, seed, trial):
    rng = np.random.default_rng([seed, trial])
    while True:
        w = rng.standard_normal(n)
        s = w.sum()
        if abs(s) >= SUM_REDRAW:
            return w / s


def r2_ranking(models, sample, n_trials=1000, seed=0, names=None, literal=False):
    """Award each random portfolio to the model whose volatility best explains it.

    For every trial, standard-normal weights are normalized to sum one; each
    model's portfolio volatility sqrt(w^T A_t w) is regressed (with an
    intercept) on the absolute net portfolio return.  Ties go to the lowest
    model index.
    """
    if len(models) < 2:
        raise InvalidInputError("need at least two models to rank")
    z = _returns(sample)
    x = np.expm1(z)
    A_paths = [net_return_cov(H, literal=literal) for H in models]
    for A in A_paths:
        if A.shape != (z.shape[0], z.shape[1], z.shape[1]):
            raise InvalidInputError("model path does not match the sample")
    n = z.shape[1]
    M = len(models)
    r2 = np.empty((n_trials, M))
    wins = np.zeros(M, dtype=int)
    for trial in range(n_trials):
        w = _trial_weights(n, seed, trial)
        proxy = np.abs(x @ w)
        for k, A in enumerate(A_paths):
            var = np.einsum("i,tij,j->t", w, A, w)
            r2[trial, k] = _r2(np.sqrt(np.maximum(var, 0.0)), proxy)
        wins[int(np.argmax(r2[trial]))] += 1
    names = list(names) if names is not None else [f"model{k}" for k in range(M)]
    return ModelComparison(names=names, wins=wins, n_trials=n_trials, r2=r2)


def compare_models(models, sample, n_trials=1000, seed=0, names=None, literal=False):
    """R^2 ranking plus MSE and realized variance of each model's optimal portfolio."""
    cmp = r2_ranking(models, sample, n_trials, seed, names, literal)
    x = np.expm1(_returns(sample))
    mse, rv = [], []
    for H in models:
        A = net_return_cov(H, literal=literal)
        W = weights_path(A)
        vol = np.sqrt(np.maximum(np.einsum("ti,tij,tj->t", W, A, W), 0.0))
        r = np.einsum("ti,ti->t", W, x)
        mse.append(mse_vs_proxy(vol, r))
        rv.append(float(np.var(r)))
    cmp.mse = np.array(mse)
    cmp.realized_var = np.array(rv)
    return cmp


def planted_perfect_path(sample):
    """H_t = log(1 + x_t x_t^T) with x_t the net returns: w^T A_t w = (w^T x_t)^2."""
    x = np.expm1(_returns(sample))
    return np.log1p(x[:, :, None] * x[:, None, :])


@dataclass
class SpectrumReport:
    eig_A: np.ndarray
    eig_B: np.ndarray
    rank_A: int
    rank_B: int


def _spectrum(M, rel):
    w = np.sort(np.linalg.eigvalsh(matops.sigma(M)))[::-1]
    top = w[0]
    rank = int(np.sum(w > rel * top)) if top > 0 else 0
    return w, rank


def spectrum_report(params, rel=1e-8):
    """Eigenvalues of Sigma(A) and Sigma(B), largest first, with effective ranks."""
    eA, rA = _spectrum(params.A, rel)
    eB, rB = _spectrum(params.B, rel)
    return SpectrumReport(eig_A=eA, eig_B=eB, rank_A=rA, rank_B=rB)
