"""
Feasibility checks for the stationarity (SC), positivity (PC),
computability (CC) and compactness (KC) constraints.

Each constraint reads "some symmetric matrix is PSD"; its margin is the
smallest eigenvalue of that matrix, so a parameter triple is feasible when
all six margins are nonnegative.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from vecgarch import matops
from vecgarch.errors import ConfigError, InvalidInputError

__all__ = [
    "ConstraintConfig",
    "FeasibilityReport",
    "constraint_matrices",
    "check",
    "strictly_feasible",
    "default_K",
    "MARGIN_NAMES",
]

MARGIN_NAMES = ("sc", "pc_c", "pc_A", "pc_B", "cc", "kc")


@dataclass(frozen=True)
class ConstraintConfig:
    """Constraint tolerances and the compactness bound ``K``.

    ``K`` has no universal default; :func:`default_K` derives it from data.
    """

    K: float
    eps_AB: float = 1e-4
    eps_A: float = 1e-4
    eps_B: float = 1e-4
    eps_c: float = 1e-4
    eps_tilde_B: float = 1e-4

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v) or v <= 0:
                raise ConfigError(f"{f.name} must be a positive finite number, got {v}")
            object.__setattr__(self, f.name, v)
        if self.eps_tilde_B >= 1 or self.eps_AB >= 1:
            raise ConfigError("eps_tilde_B and eps_AB must be < 1")
        if self.eps_c >= self.K:
            raise ConfigError("eps_c must be smaller than K or no c is feasible")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class FeasibilityReport:
    sc_margin: float
    pc_c_margin: float
    pc_A_margin: float
    pc_B_margin: float
    cc_margin: float
    kc_margin: float

    @property
    def margins(self):
        return (
            self.sc_margin,
            self.pc_c_margin,
            self.pc_A_margin,
            self.pc_B_margin,
            self.cc_margin,
            self.kc_margin,
        )

    @property
    def feasible(self):
        return all(m >= 0 for m in self.margins)

    @property
    def min_margin(self):
        return min(self.margins)

    def as_dict(self):
        d = dict(zip(MARGIN_NAMES, self.margins))
        d["feasible"] = self.feasible
        return d


def constraint_matrices(params, cfg):
    """The six constraint matrices, in the order of :data:`MARGIN_NAMES`."""
    n, N = params.n, params.N
    M = params.A + params.B
    C = matops.math(params.c)
    In, IN, In2 = np.eye(n), np.eye(N), np.eye(n * n)
    mats = (
        (1.0 - cfg.eps_AB) * IN - M @ M.T,
        C - cfg.eps_c * In,
        matops.sigma(params.A) - cfg.eps_A * In2,
        matops.sigma(params.B) - cfg.eps_B * In2,
        (1.0 - cfg.eps_tilde_B) * IN - params.B @ params.B.T,
        cfg.K * In - C,
    )
    return tuple(0.5 * (m + m.T) for m in mats)


def check(params, cfg):
    """Smallest-eigenvalue margins of all six constraints."""
    lam = [float(np.linalg.eigvalsh(m)[0]) for m in constraint_matrices(params, cfg)]
    return FeasibilityReport(*lam)


def strictly_feasible(params, cfg, rel=1e-12):
    """True when every margin is at least ``rel * (1 + ||matrix||_2)``."""
    for m in constraint_matrices(params, cfg):
        w = np.linalg.eigvalsh(m)
        if not w[0] >= rel * (1.0 + max(abs(w[0]), abs(w[-1]))):
            return False
    return True


def default_K(sample, multiple=4.0):
    """Compactness bound ``multiple * ||sample covariance||_F``."""
    z = np.asarray(getattr(sample, "z", sample), dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] < 2:
        raise InvalidInputError("need at least two observations to set K")
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / z.shape[0]
    fro = float(np.linalg.norm(cov))
    if not fro > 0:
        raise InvalidInputError("sample covariance is zero; K cannot be derived")
    return multiple * fro
