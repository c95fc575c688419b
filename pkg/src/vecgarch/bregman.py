"""
Burg (LogDet) divergence and the penalized local model solved at every
outer iteration.

The local model around an anchor theta_n is

    f0 + <g0, theta - theta_n> + sum_i L_i/2 D_B(X_i(theta), X_i(theta_n))
       + 1/2 (theta - theta_n)^T H (theta - theta_n)

where the X_i are the six constraint matrices

    X_1 = (1 - eps_AB) I_N - (A+B)^T (A+B)      X_4 = (1 - eps~_B) I_N - B^T B
    X_2 = Sigma(A) - eps_A I                     X_5 = math(c) - eps_c I_n
    X_3 = Sigma(B) - eps_B I                     X_6 = K I_n - math(c)

and H is an optional BFGS curvature proxy.  Every divergence is a barrier:
the model is finite exactly where all X_i are positive definite.

Parameters are handled in the flat layout ``[vec(A); vec(B); c]``.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from vecgarch import matops
from vecgarch.errors import DomainError, InnerSolverError
from vecgarch.model import VecParams

logger = logging.getLogger(__name__)

STRICT_REL = 1e-12
HALVING_CAP = 60

__all__ = [
    "burg_divergence",
    "LocalModel",
    "NewtonResult",
    "barrier_arguments",
    "local_model_value",
    "local_model_grad",
    "xi_apply",
    "xi_matrix",
    "frakX_apply",
    "frakX_matrix",
    "jacobian",
    "newton_solve",
]


def _sym_eigh(X):
    X = np.asarray(X, dtype=float)
    return np.linalg.eigh(0.5 * (X + X.T))


def burg_divergence(X, Y):
    """D_B(X, Y) = trace(X Y^-1) - log det(X Y^-1) - n."""
    wx, _ = _sym_eigh(X)
    wy, Vy = _sym_eigh(Y)
    if wx[0] <= 0 or wy[0] <= 0:
        raise DomainError("Burg divergence needs positive definite arguments")
    Yinv = (Vy / wy) @ Vy.T
    n = wx.size
    return float(np.sum(X * Yinv) - np.sum(np.log(wx)) + np.sum(np.log(wy)) - n)


def barrier_arguments(params, cfg):
    """The six barrier arguments X_1..X_6 at ``params``."""
    n, N = params.n, params.N
    A, B = params.A, params.B
    M = A + B
    C = matops.math(params.c)
    IN, In, In2 = np.eye(N), np.eye(n), np.eye(n * n)
    return (
        (1.0 - cfg.eps_AB) * IN - M.T @ M,
        matops.sigma(A) - cfg.eps_A * In2,
        matops.sigma(B) - cfg.eps_B * In2,
        (1.0 - cfg.eps_tilde_B) * IN - B.T @ B,
        C - cfg.eps_c * In,
        cfg.K * In - C,
    )


@dataclass
class _Factor:
    inv: np.ndarray
    logdet: float
    lam_min: float
    X: np.ndarray


def _factor(X, rel=STRICT_REL):
    w, V = _sym_eigh(X)
    if not (w[0] > 0.0 and w[0] >= rel * (1.0 + max(abs(w[0]), abs(w[-1])))):
        return None
    return _Factor(
        inv=(V / w) @ V.T,
        logdet=float(np.sum(np.log(w))),
        lam_min=float(w[0]),
        X=0.5 * (X + X.T),
    )


def _factors(params, cfg, rel=STRICT_REL):
    out = []
    for X in barrier_arguments(params, cfg):
        f = _factor(X, rel)
        if f is None:
            return None
        out.append(f)
    return out


def _as_params(theta, N):
    if isinstance(theta, VecParams):
        return theta
    return VecParams.from_flat(theta, N)


class LocalModel:
    """Penalized local model anchored at a strictly feasible point.

    Parameters
    ----------
    anchor : VecParams
    f0 : float
        Objective value at the anchor.
    g0 : ndarray
        Objective gradient at the anchor, flat layout.
    cfg : ConstraintConfig
    L : float or sequence of 6 floats
        Penalty weights L_1..L_6.
    H : ndarray, optional
        BFGS curvature proxy added as a quadratic term.
    """

    def __init__(self, anchor, f0, g0, cfg, L=1.0, H=None):
        self.anchor = anchor
        self.cfg = cfg
        self.f0 = float(f0)
        self.g0 = np.asarray(g0, dtype=float).ravel()
        self.x0 = anchor.flat()
        if self.g0.shape != self.x0.shape:
            raise DomainError("gradient does not match the parameter layout")
        L = np.broadcast_to(np.asarray(L, dtype=float), (6,)).copy()
        if np.any(L < 0):
            raise DomainError("penalty weights must be nonnegative")
        self.L = L
        self.H = None if H is None else np.asarray(H, dtype=float)
        fac = _factors(anchor, cfg)
        if fac is None:
            raise DomainError("anchor is not strictly feasible")
        self._anchor_factors = fac

    @property
    def N(self):
        return self.anchor.N

    def factors(self, theta):
        """Barrier factorizations at ``theta`` or ``None`` outside the domain."""
        return _factors(_as_params(theta, self.N), self.cfg)

    def quad(self, x):
        if self.H is None:
            return 0.0
        s = x - self.x0
        return 0.5 * float(s @ self.H @ s)


def _value(lm, x, fac):
    s = x - lm.x0
    val = lm.f0 + float(lm.g0 @ s)
    for Li, fx, fy in zip(lm.L, fac, lm._anchor_factors):
        if Li == 0.0 or np.array_equal(fx.X, fy.X):
            # D_B(X, X) = 0 exactly; the trace/logdet form leaves rounding residue
            continue
        d = float(np.sum(fx.X * fy.inv)) - fx.logdet + fy.logdet - fx.X.shape[0]
        val += 0.5 * Li * d
    return val + lm.quad(x)


def local_model_value(lm, theta):
    """Local model value; ``inf`` outside the open feasible region."""
    p = _as_params(theta, lm.N)
    fac = _factors(p, lm.cfg, rel=0.0)
    if fac is None:
        return np.inf
    return _value(lm, p.flat(), fac)


def _grad(lm, p, fac):
    L1, L2, L3, L4, L5, L6 = lm.L
    Y = [f.inv for f in lm._anchor_factors]
    X = [f.inv for f in fac]
    M = p.A + p.B
    t1 = -L1 * M @ (Y[0] - X[0])
    gA = t1 + 0.5 * L2 * matops.sigma_adj(Y[1] - X[1])
    gB = t1 + 0.5 * L3 * matops.sigma_adj(Y[2] - X[2]) - L4 * p.B @ (Y[3] - X[3])
    gc = 0.5 * L5 * matops.math_adj(Y[4] - X[4]) - 0.5 * L6 * matops.math_adj(Y[5] - X[5])
    x = p.flat()
    g = lm.g0 + np.concatenate([matops.vec(gA), matops.vec(gB), gc])
    if lm.H is not None:
        g = g + lm.H @ (x - lm.x0)
    return g


def local_model_grad(lm, theta):
    """Gradient of the local model (BFGS term included when present), flat."""
    p = _as_params(theta, lm.N)
    fac = _factors(p, lm.cfg, rel=0.0)
    if fac is None:
        raise DomainError("local model gradient requested outside the feasible region")
    return _grad(lm, p, fac)


def _lambda_inv(A, eps):
    N = A.shape[0]
    f = _factor((1.0 - eps) * np.eye(N) - A.T @ A, rel=0.0)
    if f is None:
        raise DomainError("I - A^T A is not positive definite")
    return f.inv


def xi_apply(A_anchor, A, D, eps=0.0):
    """Direct evaluation of the tangent map Xi_A(D) of -A (Lambda(A_n)^-1 - Lambda(A)^-1)."""
    Yinv = _lambda_inv(np.asarray(A_anchor, dtype=float), eps)
    Xinv = _lambda_inv(np.asarray(A, dtype=float), eps)
    D = np.asarray(D, dtype=float)
    return -D @ (Yinv - Xinv) + A @ Xinv @ (D.T @ A + A.T @ D) @ Xinv


@lru_cache(maxsize=32)
def _commutation_perm(N):
    perm = np.arange(N * N).reshape(N, N).T.ravel()
    perm.setflags(write=False)
    return perm


def _xi_from_inverses(M, Yinv, Xinv):
    N = M.shape[0]
    MX = M @ Xinv
    # [P (x) Q] K_NN is a column permutation of P (x) Q
    swap = np.kron(MX.T, MX)[:, _commutation_perm(N)]
    return -np.kron(Yinv - Xinv, np.eye(N)) + swap + np.kron(Xinv, MX @ M.T)


def xi_matrix(A_anchor, A, eps=0.0):
    """Matrix of D -> Xi_A(D) acting on vec(D) (closed Kronecker form)."""
    A = np.asarray(A, dtype=float)
    return _xi_from_inverses(A, _lambda_inv(np.asarray(A_anchor, dtype=float), eps), _lambda_inv(A, eps))


def _sigma_inverse(A, eps):
    n = matops.full_dim(np.asarray(A).shape[0])
    f = _factor(matops.sigma(A) - eps * np.eye(n * n), rel=0.0)
    if f is None:
        raise DomainError("Sigma(A) is not positive definite")
    return f.inv


def frakX_apply(A, D, eps=0.0):
    """Sigma*(S^-1 Sigma(D) S^-1) with S = Sigma(A) - eps I."""
    Sinv = _sigma_inverse(A, eps)
    return matops.sigma_adj(Sinv @ matops.sigma(D) @ Sinv)


@lru_cache(maxsize=16)
def _sigma_basis(n):
    N = matops.half_dim(n)
    S = matops.sigma_matrix(n).T.reshape(N * N, n * n, n * n)
    S.setflags(write=False)
    return S


def _frakX_from_inverse(Sinv, n):
    S = _sigma_basis(n)
    Y = Sinv @ S @ Sinv
    return matops.sigma_matrix(n).T @ Y.reshape(Y.shape[0], -1).T


def frakX_matrix(A, eps=0.0):
    """Matrix of D -> frakX_A(D), assembled over the canonical basis of M_N."""
    A = np.asarray(A, dtype=float)
    n = matops.full_dim(A.shape[0])
    return _frakX_from_inverse(_sigma_inverse(A, eps), n)


@lru_cache(maxsize=16)
def _duplication(n):
    N = matops.half_dim(n)
    D = np.zeros((n * n, N))
    tilde = matops.sigma_index(n).tilde
    for j in range(n):
        for i in range(n):
            D[i + j * n, tilde[i, j]] = 1.0
    D.setflags(write=False)
    return D


def _sandwich_matrix(P, n):
    D = _duplication(n)
    return D.T @ np.kron(P, P) @ D


def _jacobian(lm, p, fac):
    L1, L2, L3, L4, L5, L6 = lm.L
    N, n = p.N, p.n
    Y = [f.inv for f in lm._anchor_factors]
    X = [f.inv for f in fac]
    NN = N * N
    xiAB = _xi_from_inverses(p.A + p.B, Y[0], X[0])
    JAA = L1 * xiAB + 0.5 * L2 * _frakX_from_inverse(X[1], n)
    JBB = L1 * xiAB + 0.5 * L3 * _frakX_from_inverse(X[2], n) + L4 * _xi_from_inverses(p.B, Y[3], X[3])
    Jcc = 0.5 * L5 * _sandwich_matrix(X[4], n) + 0.5 * L6 * _sandwich_matrix(X[5], n)
    J = np.zeros((2 * NN + N, 2 * NN + N))
    J[:NN, :NN] = JAA
    J[:NN, NN:2 * NN] = L1 * xiAB
    J[NN:2 * NN, :NN] = L1 * xiAB
    J[NN:2 * NN, NN:2 * NN] = JBB
    J[2 * NN:, 2 * NN:] = Jcc
    return 0.5 * (J + J.T)


def jacobian(lm, theta):
    """Symmetrized Jacobian of the barrier part of the local model gradient.

    The BFGS proxy is not included.
    """
    p = _as_params(theta, lm.N)
    fac = _factors(p, lm.cfg, rel=0.0)
    if fac is None:
        raise DomainError("Jacobian requested outside the feasible region")
    return _jacobian(lm, p, fac)


def _regularized_solve(J, rhs):
    """Solve J d = rhs, shifting the diagonal until J + tau I is positive definite."""
    p = J.shape[0]
    scale = max(float(np.max(np.abs(np.diag(J)))), abs(float(np.trace(J))) / p, 1e-300)
    tau = 0.0
    for _ in range(40):
        Jt = J + tau * np.eye(p) if tau else J
        try:
            np.linalg.cholesky(Jt)
            return np.linalg.solve(Jt, rhs), tau
        except np.linalg.LinAlgError:
            tau = 1e-8 * scale if tau == 0.0 else 10.0 * tau
    raise InnerSolverError("Newton system could not be regularized")


@dataclass
class NewtonResult:
    params: VecParams
    value: float
    grad_norm: float
    converged: bool
    iterations: int
    halving_capped: bool = False
    margins: list = field(default_factory=list)
    iterates: list = field(default_factory=list)


def newton_solve(lm, max_iter=50, tol=1e-8, keep_iterates=False):
    """Minimize the local model by damped Newton-Raphson.

    Each Newton step is halved back toward the previous iterate until the
    point is strictly inside every barrier and the model value has not
    increased, so every inner iterate is feasible.  ``margins`` records the
    smallest barrier eigenvalue of each accepted inner iterate.
    """
    N = lm.N
    x = lm.x0.copy()
    p = lm.anchor
    fac = lm._anchor_factors
    val = _value(lm, x, fac)
    gtol = tol * (1.0 + float(np.linalg.norm(lm.g0)))
    res = NewtonResult(params=p, value=val, grad_norm=np.inf, converged=False, iterations=0)
    res.margins.append(min(f.lam_min for f in fac))
    if keep_iterates:
        res.iterates.append(p)
    for it in range(1, max_iter + 1):
        g = _grad(lm, p, fac)
        gnorm = float(np.linalg.norm(g))
        res.grad_norm = gnorm
        if gnorm <= gtol:
            res.converged = True
            break
        J = _jacobian(lm, p, fac)
        if lm.H is not None:
            J = J + lm.H
        d, _ = _regularized_solve(J, -g)
        t = 1.0
        slack = 1e-13 * max(1.0, abs(val))
        for _ in range(HALVING_CAP + 1):
            xn = x + t * d
            pn = VecParams.from_flat(xn, N)
            fn = _factors(pn, lm.cfg)
            if fn is not None:
                vn = _value(lm, xn, fn)
                if vn <= val + slack:
                    break
            t *= 0.5
        else:
            res.halving_capped = True
            logger.debug("newton: halving cap reached at inner iteration %d", it)
            break
        res.iterations = it
        if np.linalg.norm(xn - x) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            break
        x, p, fac, val = xn, pn, fn, vn
        res.margins.append(min(f.lam_min for f in fac))
        if keep_iterates:
            res.iterates.append(p)
    else:
        res.grad_norm = float(np.linalg.norm(_grad(lm, p, fac)))
        res.converged = res.grad_norm <= gtol
    res.params = p
    res.value = val
    return res
