"""
VEC(1,1) conditional covariance model.

    z_t = H_t^{1/2} eps_t,        eps_t ~ IID N(0, I_n)
    h_t = c + A eta_{t-1} + B h_{t-1},   h_t = vech(H_t), eta_t = vech(z_t z_t^T)

Observation ``s`` of a sample (0-based) is date ``t = s + 1``; the presample
values ``z0`` and ``H0`` play the role of date 0.

Parameter vectors are flattened as ``[vec(A); vec(B); c]`` throughout the
package.
"""

import logging
from dataclasses import dataclass

import numpy as np

from vecgarch import matops
from vecgarch.errors import (
    ConfigError,
    ConstraintError,
    DimensionError,
    InvalidInputError,
    LikelihoodError,
    PositivityError,
    StationarityError,
)

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
COND_CAP = 1e12

__all__ = [
    "VecParams",
    "Sample",
    "FilterOutput",
    "GradTheta",
    "AsymptoticCovariance",
    "parameter_count",
    "stationary_variance",
    "simulate",
    "filter",
    "neg_loglik",
    "grad_closed_form",
    "grad_recursive",
    "scores",
    "truncation_depth",
    "truncation_error_bounds",
    "asymptotic_covariance",
]


def parameter_count(n):
    """Number of free parameters N(2N+1) of a VEC(1,1) model in dimension n."""
    if n < 1:
        raise DimensionError("n must be >= 1")
    N = matops.half_dim(n)
    return N * (2 * N + 1)


@dataclass(frozen=True)
class VecParams:
    """Parameter triple (c, A, B)."""

    c: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        N = c.size
        matops.full_dim(N)
        if A.shape != (N, N) or B.shape != (N, N):
            raise DimensionError(
                f"A and B must be {N}x{N} to match c, got {A.shape} and {B.shape}"
            )
        for name, val in (("c", c), ("A", A), ("B", B)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def N(self):
        return self.c.size

    @property
    def n(self):
        return matops.full_dim(self.N)

    @property
    def n_params(self):
        return self.N * (2 * self.N + 1)

    def flat(self):
        return np.concatenate([matops.vec(self.A), matops.vec(self.B), self.c])

    @classmethod
    def from_flat(cls, x, N):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != N * (2 * N + 1):
            raise DimensionError(f"flat vector of length {x.size} does not fit N={N}")
        nn = N * N
        return cls(
            c=x[2 * nn:],
            A=matops.mat(x[:nn], N),
            B=matops.mat(x[nn:2 * nn], N),
        )

    def replace(self, **kw):
        d = {"c": self.c, "A": self.A, "B": self.B}
        d.update(kw)
        return VecParams(**d)


@dataclass(frozen=True)
class Sample:
    """Observed returns ``z`` (T x n) and optional presample ``z0``, ``H0``."""

    z: np.ndarray
    z0: np.ndarray = None
    H0: np.ndarray = None

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.ndim != 2 or z.shape[0] < 1:
            raise DimensionError(f"returns must be a T x n array, got shape {z.shape}")
        n = z.shape[1]
        object.__setattr__(self, "z", z)
        if self.z0 is not None:
            z0 = np.array(self.z0, dtype=float).ravel()
            if z0.size != n:
                raise DimensionError("presample z0 has the wrong dimension")
            object.__setattr__(self, "z0", z0)
        if self.H0 is not None:
            H0 = np.array(self.H0, dtype=float, ndmin=2)
            if H0.shape != (n, n):
                raise DimensionError("presample H0 has the wrong dimension")
            object.__setattr__(self, "H0", 0.5 * (H0 + H0.T))

    @property
    def T(self):
        return self.z.shape[0]

    @property
    def n(self):
        return self.z.shape[1]

    def with_presample(self, z0=None, H0=None):
        return Sample(self.z, z0=z0, H0=H0)

    def covariance(self):
        """Sample covariance (ddof=0)."""
        zc = self.z - self.z.mean(axis=0)
        return zc.T @ zc / self.T


@dataclass
class FilterOutput:
    H: np.ndarray  # (T, n, n)
    h: np.ndarray  # (T, N)
    eta: np.ndarray  # (T, N), eta[s] = vech(z_s z_s^T)
    h0: np.ndarray  # vech(H0)
    eta0: np.ndarray  # vech(z0 z0^T)

    @property
    def h_lag(self):
        """h_{t-1} aligned with date t."""
        return np.vstack([self.h0, self.h[:-1]])

    @property
    def eta_lag(self):
        """eta_{t-1} aligned with date t."""
        return np.vstack([self.eta0, self.eta[:-1]])


@dataclass
class GradTheta:
    """Gradient of the quasi-loglikelihood with respect to (c, A, B)."""

    dc: np.ndarray
    dA: np.ndarray
    dB: np.ndarray

    def flat(self):
        return np.concatenate([matops.vec(self.dA), matops.vec(self.dB), self.dc])

    @classmethod
    def from_flat(cls, x, N):
        nn = N * N
        x = np.asarray(x, dtype=float)
        return cls(dc=x[2 * nn:].copy(), dA=matops.mat(x[:nn], N), dB=matops.mat(x[nn:2 * nn], N))

    def __neg__(self):
        return GradTheta(-self.dc, -self.dA, -self.dB)


def _batch_vech(X):
    idx = matops.sigma_index(X.shape[-1])
    return X[..., idx.rows, idx.cols]


def _batch_math_adj(X):
    idx = matops.sigma_index(X.shape[-1])
    w = np.where(idx.is_diag, 1.0, 2.0)
    return X[..., idx.rows, idx.cols] * w


def _batch_math(h, n):
    return h[..., matops.sigma_index(n).tilde]


def stationary_variance(params):
    """Marginal covariance math((I - A - B)^{-1} c)."""
    M = params.A + params.B
    smax = np.linalg.norm(M, 2)
    if not smax < 1.0:
        raise StationarityError(f"sigma_max(A+B) = {smax:.6g} >= 1")
    try:
        x = np.linalg.solve(np.eye(params.N) - M, params.c)
    except np.linalg.LinAlgError as exc:
        raise StationarityError("I - A - B is singular") from exc
    return matops.math(x)


def _presample(params, sample):
    n = sample.n
    if n != params.n:
        raise DimensionError(f"sample dimension {n} does not match parameters ({params.n})")
    z0 = np.zeros(n) if sample.z0 is None else sample.z0
    H0 = stationary_variance(params) if sample.H0 is None else sample.H0
    return z0, H0


def _run_recursion(params, u):
    """h_s = u_s + B h_{s-1}, returned for s = 0..T-1; u already holds h_{-1} term."""
    T, N = u.shape
    h = np.empty_like(u)
    if N == 1:
        b = float(params.B[0, 0])
        prev = 0.0
        uu = u[:, 0].tolist()
        out = h[:, 0]
        for s in range(T):
            prev = uu[s] + b * prev
            out[s] = prev
        return h
    Bt = params.B.T
    prev = np.zeros(N)
    for s in range(T):
        prev = u[s] + prev @ Bt
        h[s] = prev
    return h


def filter(params, sample, check_psd=True):
    """Filter the conditional covariances H_1..H_T implied by ``params``.

    Without a presample, H0 is the stationary variance and z0 = 0.

    Raises
    ------
    PositivityError
        If some H_t has an eigenvalue below -1e-8 ||H_t||.
    """
    z0, H0 = _presample(params, sample)
    z = sample.z
    n = sample.n
    eta = _batch_vech(z[:, :, None] * z[:, None, :])
    eta0 = matops.vech(np.outer(z0, z0))
    h0 = matops.vech(H0)
    eta_lag = np.vstack([eta0, eta[:-1]])
    u = params.c + eta_lag @ params.A.T
    u[0] += params.B @ h0
    h = _run_recursion(params, u)
    H = _batch_math(h, n)
    out = FilterOutput(H=H, h=h, eta=eta, h0=h0, eta0=eta0)
    if check_psd:
        w = np.linalg.eigvalsh(H)
        scale = np.linalg.norm(H, axis=(1, 2))
        bad = np.nonzero(w[:, 0] < -1e-8 * scale)[0]
        if bad.size:
            s = int(bad[0])
            raise PositivityError(s + 1, float(w[s, 0]))
    return out


def _inverse_terms(H, z):
    """Eigen-based log-determinants, quadratic forms and inverses of H_t."""
    w, V = np.linalg.eigh(H)
    wmin, wmax = w[:, 0], w[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(wmin > 0, wmax / wmin, np.inf)
    bad = np.nonzero(~(cond <= COND_CAP))[0]
    if bad.size:
        s = int(bad[0])
        raise LikelihoodError(s + 1, f"condition number {cond[s]:.3e} exceeds {COND_CAP:.0e}")
    # floor keeps the solve defined when fp noise pushes an eigenvalue down
    floor = 1e-12 * np.sum(w, axis=1, keepdims=True) / H.shape[-1]
    w = np.maximum(w, floor)
    logdet = np.sum(np.log(w), axis=1)
    y = np.einsum("tji,tj->ti", V, z)
    quad = np.sum(y * y / w, axis=1)
    Hinv = np.einsum("tij,tj,tkj->tik", V, 1.0 / w, V)
    return logdet, quad, Hinv


def neg_loglik(params, sample, fout=None):
    """Minus the Gaussian quasi-loglikelihood of the sample."""
    if fout is None:
        fout = filter(params, sample, check_psd=False)
    logdet, quad, _ = _inverse_terms(fout.H, sample.z)
    T, n = sample.z.shape
    return 0.5 * T * n * LOG_2PI + 0.5 * float(np.sum(logdet)) + 0.5 * float(np.sum(quad))


def _direct_gradients(fout, z):
    """v_t = math*(grad_{H_t} l_t) for every date."""
    _, _, Hinv = _inverse_terms(fout.H, z)
    y = np.einsum("tij,tj->ti", Hinv, z)
    Lam = y[:, :, None] * y[:, None, :]
    return _batch_math_adj(0.5 * (Lam - Hinv))


def grad_closed_form(params, sample, fout=None):
    """Gradient of log L from the explicit power-series expressions.

    Each date contributes sum_i (B^T)^i g_t x_{t-i-1}^T with
    g_t = gamma_t - Gamma_t and x in {1, eta, h}; the double sums are
    collected lag by lag, so the cost is linear in T.
    """
    if fout is None:
        fout = filter(params, sample, check_psd=False)
    g = _direct_gradients(fout, sample.z)
    T, N = g.shape
    acc = np.empty_like(g)
    Bmat = params.B
    run = np.zeros(N)
    for s in range(T - 1, -1, -1):
        run = g[s] + run @ Bmat
        acc[s] = run
    return GradTheta(
        dc=acc.sum(axis=0),
        dA=acc.T @ fout.eta_lag,
        dB=acc.T @ fout.h_lag,
    )


def _tangent_scores(params, fout, g, k_trunc=None):
    """Per-date scores from the forward matrix recursions for c_t, A_t, B_t."""
    T, N = g.shape
    I = np.eye(N)
    Bt = params.B.T
    eta_lag, h_lag = fout.eta_lag, fout.h_lag
    Ct = np.zeros((N, N))
    At = np.zeros((N * N, N))
    Btm = np.zeros((N * N, N))
    if k_trunc is not None:
        Pk = np.linalg.matrix_power(Bt, int(k_trunc))
    sc = np.empty((T, N))
    sA = np.empty((T, N * N))
    sB = np.empty((T, N * N))
    for s in range(T):
        Ct = I + Ct @ Bt
        At = np.kron(eta_lag[s][:, None], I) + At @ Bt
        Btm = np.kron(h_lag[s][:, None], I) + Btm @ Bt
        if k_trunc is not None and s >= k_trunc:
            # slide the window: drop the term that is now k lags back
            Ct = Ct - Pk
            At = At - np.kron(eta_lag[s - k_trunc][:, None], I) @ Pk
            Btm = Btm - np.kron(h_lag[s - k_trunc][:, None], I) @ Pk
        sc[s] = Ct @ g[s]
        sA[s] = At @ g[s]
        sB[s] = Btm @ g[s]
    return np.hstack([sA, sB, sc])


def scores(params, sample, k_trunc=None, fout=None):
    """Per-date scores d l_t / d theta as a (T, N(2N+1)) array (flat layout)."""
    if fout is None:
        fout = filter(params, sample, check_psd=False)
    g = _direct_gradients(fout, sample.z)
    return _tangent_scores(params, fout, g, k_trunc)


def grad_recursive(params, sample, k_trunc=None, fout=None):
    """Gradient of log L through the adjoint tangent recursions.

    With ``k_trunc`` set, each date only looks ``k_trunc`` steps back.
    """
    if k_trunc is not None and int(k_trunc) < 1:
        raise ConfigError("truncation depth must be >= 1")
    if k_trunc is not None and int(k_trunc) >= sample.T:
        k_trunc = None
    s = scores(params, sample, k_trunc=k_trunc, fout=fout)
    return GradTheta.from_flat(s.sum(axis=0), params.N)


def _check_tols(cfg):
    eb = cfg.eps_tilde_B
    if not (0.0 < eb < 1.0) or cfg.eps_AB <= 0 or cfg.eps_c <= 0:
        raise ConfigError("need 0 < eps_tilde_B < 1, eps_AB > 0, eps_c > 0")


def truncation_depth(cfg, delta):
    """Number of recursion steps that keeps the gradient error below ``delta``."""
    _check_tols(cfg)
    if not delta > 0:
        raise ConfigError("delta must be positive")
    eb = cfg.eps_tilde_B
    base = np.log1p(-eb)
    k1 = np.log(eb * delta / 2.0) / base
    k2 = np.log(eb * cfg.eps_AB * delta / (2.0 * cfg.eps_c)) / base
    return max(1, int(np.ceil(max(k1, k2))))


def truncation_error_bounds(cfg, k, c_norm=1.0):
    """Operator-norm bounds on the truncation error of the c, A and B tangents."""
    _check_tols(cfg)
    eb = cfg.eps_tilde_B
    decay = 2.0 * (1.0 - eb) ** k
    b_ab = decay * c_norm / cfg.eps_AB
    return decay / eb, b_ab, b_ab


@dataclass
class AsymptoticCovariance:
    omega: np.ndarray
    A0: np.ndarray
    B0: np.ndarray
    T: int
    pinv_used: bool = False

    @property
    def stderr(self):
        """Standard errors of the flat parameter vector."""
        return np.sqrt(np.maximum(np.diag(self.omega), 0.0) / self.T)


def asymptotic_covariance(params, sample, rel_step=1e-5):
    """Sandwich estimate A0^{-1} B0 A0^{-1} of the QMLE covariance.

    B0 is the mean outer product of the per-date scores; A0 is minus the
    central finite-difference Jacobian of the total score, divided by T.
    Steps are ``rel_step * (1 + |theta_i|)`` for A and B entries and
    ``rel_step * max(|c_i|, max|c|)`` for c.
    """
    T = sample.T
    S = scores(params, sample)
    B0 = S.T @ S / T
    x0 = params.flat()
    N = params.N
    p = x0.size
    # c lives on the scale of the data, A and B are O(1)
    c_scale = max(float(np.max(np.abs(params.c))), 1e-300)
    base = np.concatenate([1.0 + np.abs(x0[:2 * N * N]), np.maximum(np.abs(params.c), c_scale)])
    J = np.empty((p, p))
    for i in range(p):
        h = rel_step * base[i]
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        gp = grad_closed_form(VecParams.from_flat(xp, N), sample).flat()
        gm = grad_closed_form(VecParams.from_flat(xm, N), sample).flat()
        J[:, i] = (gp - gm) / (2 * h)
    A0 = -0.5 * (J + J.T) / T
    # judge conditioning in units where every parameter is O(1)
    D = np.diag(base)
    S = D @ A0 @ D
    pinv_used = False
    try:
        if np.linalg.cond(S) > COND_CAP:
            raise np.linalg.LinAlgError("ill-conditioned")
        A0inv = D @ np.linalg.inv(S) @ D
    except np.linalg.LinAlgError:
        logger.warning("A0 is singular; using the pseudo-inverse")
        A0inv = D @ np.linalg.pinv(S) @ D
        pinv_used = True
    omega = A0inv @ B0 @ A0inv
    omega = 0.5 * (omega + omega.T)
    return AsymptoticCovariance(omega=omega, A0=A0, B0=B0, T=T, pinv_used=pinv_used)


def _require_feasible_for_simulation(params):
    tol = 1e-12
    checks = {
        "math(c)": np.linalg.eigvalsh(matops.math(params.c))[0],
        "Sigma(A)": np.linalg.eigvalsh(matops.sigma(params.A))[0],
        "Sigma(B)": np.linalg.eigvalsh(matops.sigma(params.B))[0],
    }
    for name, lam in checks.items():
        if lam < -tol:
            raise ConstraintError(f"{name} is not positive semidefinite (min eigenvalue {lam:.3e})")
    smax = np.linalg.norm(params.A + params.B, 2)
    if not smax < 1.0:
        raise ConstraintError(f"sigma_max(A+B) = {smax:.6g} violates stationarity")


def _psd_sqrt(H):
    w, V = np.linalg.eigh(H)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def simulate(params, T, seed=None, H0=None, z0=None):
    """Simulate ``T`` observations; returns ``(Sample, FilterOutput)``.

    The sample carries the presample actually used, so filtering it again
    reproduces the simulated path exactly.
    """
    _require_feasible_for_simulation(params)
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    n = params.n
    if H0 is None:
        H0 = stationary_variance(params)
    H0 = np.array(H0, dtype=float, ndmin=2)
    z0 = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((T, n))
    idx = matops.sigma_index(n)
    c, A, B = params.c, params.A, params.B
    z = np.empty((T, n))
    h = np.empty((T, params.N))
    h_prev = matops.vech(H0)
    eta_prev = matops.vech(np.outer(z0, z0))
    for s in range(T):
        h_s = c + A @ eta_prev + B @ h_prev
        H_s = h_s[idx.tilde]
        if n == 1:
            z_s = np.sqrt(max(H_s[0, 0], 0.0)) * eps[s]
        else:
            z_s = _psd_sqrt(H_s) @ eps[s]
        z[s] = z_s
        h[s] = h_s
        h_prev = h_s
        eta_prev = np.outer(z_s, z_s)[idx.rows, idx.cols]
    sample = Sample(z, z0=z0, H0=H0)
    eta = _batch_vech(z[:, :, None] * z[:, None, :])
    fout = FilterOutput(
        H=_batch_math(h, n), h=h, eta=eta,
        h0=matops.vech(H0), eta0=matops.vech(np.outer(z0, z0)),
    )
    return sample, fout
