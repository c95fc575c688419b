"""Tests for constraint checking, margins and the compactness bound."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecgarch import matops
from vecgarch.constraints import (
    MARGIN_NAMES,
    ConstraintConfig,
    check,
    constraint_matrices,
    default_K,
    strictly_feasible,
)
from vecgarch.errors import ConfigError, InvalidInputError
from vecgarch.model import Sample, VecParams

from _helpers import feasible

EPS = dict(eps_AB=0.01, eps_A=0.01, eps_B=0.01, eps_c=0.01, eps_tilde_B=0.01)


def _zero_dynamics(n=2):
    N = matops.half_dim(n)
    return VecParams(c=matops.vech(np.eye(n)), A=np.zeros((N, N)), B=np.zeros((N, N)))


class TestConfig:
    def test_defaults(self):
        cfg = ConstraintConfig(K=3.0)
        assert cfg.eps_AB == cfg.eps_A == cfg.eps_B == cfg.eps_c == cfg.eps_tilde_B == 1e-4

    @pytest.mark.parametrize("kw", [
        {"K": 0.0}, {"K": -1.0}, {"K": np.inf}, {"K": 1.0, "eps_A": 0.0},
        {"K": 1.0, "eps_tilde_B": 1.0}, {"K": 1.0, "eps_AB": 1.5}, {"K": 1e-5},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ConstraintConfig(**kw)

    def test_with(self):
        cfg = ConstraintConfig(K=3.0).with_(K=5.0)
        assert cfg.K == 5.0 and cfg.eps_c == 1e-4


class TestCheck:
    def test_zero_dynamics_feasible(self):
        rep = check(_zero_dynamics(), ConstraintConfig(K=10.0, **EPS))
        # A = B = 0 leaves -eps on the Sigma(A), Sigma(B) constraints
        assert rep.sc_margin == pytest.approx(0.99)
        assert rep.cc_margin == pytest.approx(0.99)
        assert rep.pc_c_margin == pytest.approx(0.99)
        assert rep.kc_margin == pytest.approx(9.0)
        assert rep.pc_A_margin == pytest.approx(-0.01)

    def test_identity_dynamics_feasible(self):
        unit = matops.sigma_inv(np.eye(4)) / 2.0
        p = VecParams(c=matops.vech(np.eye(2)), A=0.1 * unit, B=0.5 * unit)
        rep = check(p, ConstraintConfig(K=10.0, **EPS))
        assert rep.feasible
        assert all(m > 0 for m in rep.margins)

    def test_unit_singular_value(self):
        p, _ = feasible(2, 0)
        B = p.B / np.linalg.norm(p.B, 2)
        rep = check(p.replace(B=B), ConstraintConfig(K=10.0, **EPS))
        assert rep.cc_margin == pytest.approx(-0.01, abs=1e-12)
        assert not rep.feasible

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_constructed_params_eigensolver_oracle(self, n):
        p, cfg = feasible(n, n)
        rep = check(p, cfg)
        assert rep.feasible
        # independent oracle: smallest singular values / eigenvalues by SVD
        M = p.A + p.B
        assert rep.sc_margin == pytest.approx(1 - cfg.eps_AB - np.linalg.svd(M, compute_uv=False)[0] ** 2, abs=1e-12)
        assert rep.cc_margin == pytest.approx(
            1 - cfg.eps_tilde_B - np.linalg.svd(p.B, compute_uv=False)[0] ** 2, abs=1e-12)
        assert rep.pc_A_margin == pytest.approx(np.linalg.eigvalsh(matops.sigma(p.A))[0] - cfg.eps_A, abs=1e-12)

    def test_report_dict(self):
        p, cfg = feasible(2, 1)
        d = check(p, cfg).as_dict()
        assert list(d) == list(MARGIN_NAMES) + ["feasible"]
        assert d["feasible"] is True

    def test_matrices_symmetric(self):
        p, cfg = feasible(3, 2)
        for m in constraint_matrices(p, cfg):
            np.testing.assert_array_equal(m, m.T)

    def test_strict(self):
        p, cfg = feasible(2, 3)
        assert strictly_feasible(p, cfg)
        assert not strictly_feasible(p.replace(c=np.zeros(3)), cfg)


class TestProperties:
    @given(st.integers(0, 2**31), st.floats(0.0, 0.999))
    @settings(max_examples=40, deadline=None)
    def test_shrinking_B_never_hurts_cc(self, seed, factor):
        p, cfg = feasible(2, seed % 1000)
        assert check(p.replace(B=factor * p.B), cfg).cc_margin >= check(p, cfg).cc_margin - 1e-15

    @given(st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_small_perturbations_stay_feasible(self, seed):
        rng = np.random.default_rng(seed)
        p, cfg = feasible(2, seed % 1000)
        m = check(p, cfg).min_margin
        assert m > 0
        # each constraint matrix moves by at most a few times ||dtheta|| (Sigma has norm <= n,
        # the quadratic terms by 2||M|| + ||d||), so this radius keeps it below m / 4
        radius = m / (4.0 * 2 * (2 + 3))
        x = p.flat()
        d = rng.standard_normal(x.size)
        d *= radius / np.linalg.norm(d)
        q = VecParams.from_flat(x + d, p.N)
        assert check(q, cfg).feasible


class TestDefaultK:
    def test_standard_normal(self):
        z = np.random.default_rng(0).standard_normal((20000, 2))
        assert default_K(Sample(z)) == pytest.approx(4 * np.sqrt(2), rel=0.05)

    def test_constant_sample(self):
        with pytest.raises(InvalidInputError):
            default_K(Sample(np.ones((10, 2))))

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            default_K(Sample(np.ones((1, 2))))

    def test_scaling(self):
        z = np.random.default_rng(1).standard_normal((100, 3))
        assert default_K(Sample(2 * z)) == pytest.approx(4 * default_K(Sample(z)), rel=1e-13)

    def test_multiple(self):
        z = np.random.default_rng(2).standard_normal((100, 2))
        assert default_K(z, multiple=2.0) == pytest.approx(0.5 * default_K(z))
