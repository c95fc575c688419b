"""Tests for the VEC(1,1) model: filtering, likelihood, gradients, truncation."""

import numpy as np
import pytest

from vecgarch import matops, model
from vecgarch.constraints import ConstraintConfig
from vecgarch.errors import (
    ConfigError,
    ConstraintError,
    DimensionError,
    PositivityError,
    StationarityError,
)
from vecgarch.model import GradTheta, Sample, VecParams
from vecgarch.optimizer import LikelihoodObjective, OptimizerConfig, estimate

from _helpers import central_diff, feasible, presampled, rand_pd, rel_err

LOG_2PI = np.log(2.0 * np.pi)


def _scalar(c, a, b):
    return VecParams(c=[c], A=[[a]], B=[[b]])


def _literal_negloglik(params, sample):
    """Term-by-term transcription with slogdet and solve."""
    n = sample.n
    H = sample.H0
    z_prev = sample.z0
    total = 0.0
    for z in sample.z:
        h = params.c + params.A @ matops.vech(np.outer(z_prev, z_prev)) + params.B @ matops.vech(H)
        H = matops.math(h)
        _, logdet = np.linalg.slogdet(H)
        total += 0.5 * n * LOG_2PI + 0.5 * logdet + 0.5 * z @ np.linalg.solve(H, z)
        z_prev = z
    return total


def _simulated(n, seed, T=50):
    params, _ = feasible(n, seed)
    sample, _ = model.simulate(params, T, seed=seed + 100)
    return params, presampled(Sample(sample.z))


class TestVecParams:
    def test_flat_round_trip(self):
        p, _ = feasible(2, 0)
        q = VecParams.from_flat(p.flat(), p.N)
        np.testing.assert_array_equal(q.flat(), p.flat())
        assert p.n == 2 and p.N == 3 and p.n_params == 21

    def test_flat_layout(self):
        p = VecParams(c=[7.0], A=[[1.0]], B=[[2.0]])
        np.testing.assert_array_equal(p.flat(), [1.0, 2.0, 7.0])

    def test_read_only(self):
        p, _ = feasible(1, 0)
        with pytest.raises(ValueError):
            p.A[0, 0] = 1.0

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            VecParams(c=np.ones(3), A=np.eye(3), B=np.eye(2))
        with pytest.raises(DimensionError):
            VecParams(c=np.ones(4), A=np.eye(4), B=np.eye(4))

    def test_grad_theta_round_trip(self):
        x = np.arange(21.0)
        np.testing.assert_array_equal(GradTheta.from_flat(x, 3).flat(), x)


class TestParameterCount:
    def test_known_counts(self):
        assert [model.parameter_count(n) for n in range(1, 9)] == [3, 21, 78, 210, 465, 903, 1596, 2628]


class TestStationaryVariance:
    def test_zero_dynamics(self):
        C = np.array([[2.0, 0.3], [0.3, 1.0]])
        p = VecParams(c=matops.vech(C), A=np.zeros((3, 3)), B=np.zeros((3, 3)))
        np.testing.assert_allclose(model.stationary_variance(p), C)

    def test_scalar(self):
        np.testing.assert_allclose(model.stationary_variance(_scalar(0.01, 0.1, 0.8)), [[0.1]])

    def test_non_contractive(self):
        with pytest.raises(StationarityError):
            model.stationary_variance(_scalar(0.01, 0.5, 0.5))


class TestSimulate:
    def test_iid_when_no_dynamics(self):
        C = np.array([[1.0, 0.4], [0.4, 2.0]])
        p = VecParams(c=matops.vech(C), A=np.zeros((3, 3)), B=np.zeros((3, 3)))
        sample, fout = model.simulate(p, 50000, seed=1)
        np.testing.assert_allclose(fout.H, np.broadcast_to(C, fout.H.shape))
        np.testing.assert_allclose(sample.z.T @ sample.z / sample.T, C, atol=0.05)

    def test_scalar_garch_collapse(self):
        p = _scalar(0.05, 0.1, 0.85)
        sample, fout = model.simulate(p, 200, seed=2)
        h = fout.H[:, 0, 0]
        z = sample.z[:, 0]
        np.testing.assert_allclose(h[1:], 0.05 + 0.1 * z[:-1] ** 2 + 0.85 * h[:-1], rtol=1e-13)

    def test_deterministic(self):
        p, _ = feasible(2, 3)
        s1, _ = model.simulate(p, 10, seed=7)
        s2, _ = model.simulate(p, 10, seed=7)
        assert s1.z.tobytes() == s2.z.tobytes()

    def test_returns_carry_the_filter_path(self):
        p, _ = feasible(2, 4)
        sample, fout = model.simulate(p, 30, seed=0)
        refit = model.filter(p, sample)
        np.testing.assert_allclose(refit.H, fout.H, rtol=1e-12)

    def test_infeasible(self):
        with pytest.raises(ConstraintError):
            model.simulate(_scalar(0.05, -0.1, 0.85), 10, seed=0)


class TestFilter:
    def test_constant_when_no_dynamics(self):
        p = VecParams(c=[1.0, 0.2, 0.5], A=np.zeros((3, 3)), B=np.zeros((3, 3)))
        z = np.random.default_rng(0).standard_normal((20, 2))
        fout = model.filter(p, Sample(z))
        np.testing.assert_array_equal(fout.H, np.broadcast_to(matops.math(p.c), (20, 2, 2)))

    def test_one_step_unroll(self):
        p, _ = feasible(2, 5)
        rng = np.random.default_rng(5)
        z0 = rng.standard_normal(2)
        H0 = rand_pd(rng, 2)
        s = Sample(rng.standard_normal((3, 2)), z0=z0, H0=H0)
        h1 = p.c + p.A @ matops.vech(np.outer(z0, z0)) + p.B @ matops.vech(H0)
        np.testing.assert_allclose(model.filter(p, s).h[0], h1, rtol=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_explicit_power_series(self, n):
        p, _ = feasible(n, 10 + n)
        rng = np.random.default_rng(n)
        z0 = rng.standard_normal(n)
        H0 = rand_pd(rng, n)
        s = Sample(rng.standard_normal((20, n)), z0=z0, H0=H0)
        fout = model.filter(p, s)
        eta = [matops.vech(np.outer(z0, z0))] + [matops.vech(np.outer(z, z)) for z in s.z]
        h0 = matops.vech(H0)
        for t in range(1, 21):
            h = np.linalg.matrix_power(p.B, t) @ h0
            for i in range(t):
                h = h + np.linalg.matrix_power(p.B, i) @ (p.c + p.A @ eta[t - 1 - i])
            np.testing.assert_allclose(fout.h[t - 1], h, rtol=1e-10, atol=1e-14)

    def test_default_presample(self):
        p, _ = feasible(2, 6)
        z = np.random.default_rng(6).standard_normal((5, 2))
        h1 = p.c + p.B @ matops.vech(model.stationary_variance(p))
        np.testing.assert_allclose(model.filter(p, Sample(z)).h[0], h1, rtol=1e-13)

    def test_positivity_violation(self):
        p = _scalar(-1.0, 0.0, 0.0)
        with pytest.raises(PositivityError) as info:
            model.filter(p, Sample(np.ones(4), z0=[0.0], H0=[[1.0]]))
        assert info.value.t == 1

    def test_dimension_mismatch(self):
        p, _ = feasible(2, 0)
        with pytest.raises(DimensionError):
            model.filter(p, Sample(np.ones((5, 3))))

    def test_h_matches_H(self):
        p, _ = feasible(3, 1)
        _, fout = model.simulate(p, 40, seed=1)
        idx = matops.sigma_index(3)
        np.testing.assert_array_equal(fout.h, fout.H[:, idx.rows, idx.cols])


class TestNegLoglik:
    def test_scalar_unroll(self):
        c, a, b = 0.2, 0.1, 0.7
        z0, h0, z1 = 0.5, 1.3, -0.8
        h1 = c + a * z0**2 + b * h0
        expected = 0.5 * LOG_2PI + 0.5 * np.log(h1) + z1**2 / (2 * h1)
        s = Sample([z1], z0=[z0], H0=[[h0]])
        assert model.neg_loglik(_scalar(c, a, b), s) == pytest.approx(expected, rel=1e-14)

    def test_identity_covariance(self):
        z = np.random.default_rng(0).standard_normal((30, 2))
        p = VecParams(c=matops.vech(np.eye(2)), A=np.zeros((3, 3)), B=np.zeros((3, 3)))
        expected = 30 * LOG_2PI + 0.5 * np.sum(z * z)
        assert model.neg_loglik(p, Sample(z)) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_literal_transcription(self, seed):
        p, s = _simulated(2, seed)
        assert model.neg_loglik(p, s) == pytest.approx(_literal_negloglik(p, s), rel=1e-12)

    def test_reduction_order(self):
        p, s = _simulated(2, 9, T=200)
        fout = model.filter(p, s)
        logdet = np.linalg.slogdet(fout.H)[1]
        quad = np.einsum("ti,ti->t", s.z, np.linalg.solve(fout.H, s.z[:, :, None])[:, :, 0])
        terms = np.sort(0.5 * logdet + 0.5 * quad)
        total = 0.5 * s.T * s.n * LOG_2PI + float(np.sum(terms))
        assert model.neg_loglik(p, s) == pytest.approx(total, rel=1e-12)


def _fd_grad(params, sample):
    fun = lambda x: -model.neg_loglik(VecParams.from_flat(x, params.N), sample)
    return central_diff(fun, params.flat())


class TestGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_scalar_matches_fd(self, seed):
        p, s = _simulated(1, seed, T=200)
        g = model.grad_closed_form(p, s).flat()
        assert rel_err(g, _fd_grad(p, s)) <= 1e-6

    def test_scalar_textbook_score(self):
        p, s = _simulated(1, 4, T=100)
        c, a, b = p.c[0], p.A[0, 0], p.B[0, 0]
        z = np.concatenate([s.z0, s.z[:, 0]])
        h_prev, dh_prev = s.H0[0, 0], np.zeros(3)
        g = np.zeros(3)
        for t in range(1, len(z)):
            # d h_t / d(a, b, c)
            dh = np.array([z[t - 1] ** 2, h_prev, 1.0]) + b * dh_prev
            h = c + a * z[t - 1] ** 2 + b * h_prev
            g += 0.5 * (z[t] ** 2 / h - 1.0) / h * dh
            h_prev, dh_prev = h, dh
        np.testing.assert_allclose(model.grad_closed_form(p, s).flat(), g, rtol=1e-10)

    def test_no_dynamics_matches_fd(self):
        rng = np.random.default_rng(1)
        p = VecParams(c=matops.vech(rand_pd(rng, 2)), A=np.zeros((3, 3)), B=np.zeros((3, 3)))
        s = Sample(rng.standard_normal((30, 2)), z0=rng.standard_normal(2), H0=rand_pd(rng, 2))
        for fn in (model.grad_closed_form, model.grad_recursive):
            assert rel_err(fn(p, s).flat(), _fd_grad(p, s)) <= 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_closed_equals_recursive(self, seed):
        p, s = _simulated(2, seed)
        assert rel_err(model.grad_closed_form(p, s).flat(), model.grad_recursive(p, s).flat()) <= 1e-10

    @pytest.mark.parametrize("n, T", [(1, 100), (2, 100), (3, 60)])
    def test_full_depth_cross_check(self, n, T):
        p, s = _simulated(n, 20 + n, T=T)
        g1 = model.grad_closed_form(p, s).flat()
        assert rel_err(model.grad_recursive(p, s, k_trunc=T).flat(), g1) <= 1e-10
        assert rel_err(model.grad_recursive(p, s, k_trunc=10 * T).flat(), g1) <= 1e-10

    @pytest.mark.parametrize("n", [1, 2])
    def test_matches_fd(self, n):
        p, s = _simulated(n, 30 + n)
        assert rel_err(model.grad_closed_form(p, s).flat(), _fd_grad(p, s)) <= 1e-5

    def test_single_step_base(self):
        p, _ = feasible(2, 7)
        rng = np.random.default_rng(7)
        s = Sample(rng.standard_normal((1, 2)), z0=rng.standard_normal(2), H0=rand_pd(rng, 2))
        fout = model.filter(p, s)
        Hinv = np.linalg.inv(fout.H[0])
        y = Hinv @ s.z[0]
        dH = 0.5 * (np.outer(y, y) - Hinv)
        np.testing.assert_allclose(model.grad_recursive(p, s).dc, matops.math_adj(dH), rtol=1e-12)

    def test_truncation_exact_without_B(self):
        p, _ = feasible(2, 8)
        p = p.replace(B=np.zeros((3, 3)))
        s = presampled(Sample(np.random.default_rng(8).standard_normal((40, 2)) * 0.5))
        g = model.grad_recursive(p, s).flat()
        np.testing.assert_allclose(model.grad_recursive(p, s, k_trunc=1).flat(), g, rtol=1e-13, atol=1e-13)

    def test_scores_sum_to_gradient(self):
        p, s = _simulated(2, 11)
        np.testing.assert_allclose(model.scores(p, s).sum(axis=0), model.grad_closed_form(p, s).flat(),
                                   rtol=1e-10, atol=1e-10)

    def test_invalid_depth(self):
        p, s = _simulated(1, 0)
        with pytest.raises(ConfigError):
            model.grad_recursive(p, s, k_trunc=0)


class TestTruncation:
    def test_depth_example(self):
        cfg = ConstraintConfig(K=10.0, eps_tilde_B=0.5, eps_AB=1e-3, eps_c=1e-3)
        assert model.truncation_depth(cfg, 1.0) == 2

    def test_depth_floor(self):
        cfg = ConstraintConfig(K=10.0, eps_tilde_B=0.5)
        assert model.truncation_depth(cfg, 1e300) == 1

    def test_depth_monotone(self):
        cfg = ConstraintConfig(K=10.0, eps_tilde_B=0.2)
        ks = [model.truncation_depth(cfg, d) for d in np.logspace(3, -6, 40)]
        assert ks == sorted(ks)

    def test_invalid_delta(self):
        with pytest.raises(ConfigError):
            model.truncation_depth(ConstraintConfig(K=1.0), 0.0)

    def test_bounds_example(self):
        cfg = ConstraintConfig(K=10.0, eps_tilde_B=0.5, eps_AB=0.25)
        ub1, ub2, ub3 = model.truncation_error_bounds(cfg, 2, c_norm=3.0)
        assert ub1 == pytest.approx(1.0)
        assert ub2 == ub3 == pytest.approx(2 * 0.25 * 3.0 / 0.25)

    def test_bounds_vanish(self):
        cfg = ConstraintConfig(K=10.0, eps_tilde_B=0.1)
        assert max(model.truncation_error_bounds(cfg, 5000)) < 1e-200

    def test_empirical_c_block(self):
        # sum_t ||(C_t - C_t^k) math*(D_t)|| <= ub1 * sum_t ||D_t||_F
        eb = 0.3
        cfg = ConstraintConfig(K=10.0, eps_tilde_B=eb)
        p, s = _simulated(2, 12, T=80)
        p = p.replace(B=p.B * (1.0 - eb) / np.linalg.norm(p.B, 2))
        p = p.replace(A=p.A * min(1.0, 0.5 * eb / np.linalg.norm(p.A, 2)))
        fout = model.filter(p, s)
        Hinv = np.linalg.inv(fout.H)
        y = np.einsum("tij,tj->ti", Hinv, s.z)
        D = 0.5 * (y[:, :, None] * y[:, None, :] - Hinv)
        scale = float(np.sum(np.linalg.norm(D, axis=(1, 2))))
        full = model.grad_recursive(p, s).dc
        for k in range(1, 11):
            err = np.linalg.norm(model.grad_recursive(p, s, k_trunc=k).dc - full)
            assert err <= model.truncation_error_bounds(cfg, k)[0] * scale


@pytest.mark.slow
class TestAsymptoticCovariance:
    def test_symmetric_positive_diagonal(self):
        p = _scalar(0.05, 0.08, 0.9)
        sample, _ = model.simulate(p, 3000, seed=3)
        obj = LikelihoodObjective(Sample(sample.z))
        res = estimate(obj, p, ConstraintConfig(K=10.0))
        ac = model.asymptotic_covariance(res.params, obj.sample)
        np.testing.assert_allclose(ac.omega, ac.omega.T, atol=1e-8 * np.abs(ac.omega).max())
        assert np.all(np.diag(ac.omega) > 0)
        assert not ac.pinv_used

    def test_coverage(self):
        c, a, b = 0.05, 0.08, 0.9
        truth = _scalar(c, a, b)
        cfg = ConstraintConfig(K=10.0)
        hits = np.zeros(3)
        reps = 50
        for r in range(reps):
            sample, _ = model.simulate(truth, 4000, seed=1000 + r)
            obj = LikelihoodObjective(Sample(sample.z))
            res = estimate(obj, truth, cfg, OptimizerConfig(f_tol=1e-7))
            ac = model.asymptotic_covariance(res.params, obj.sample)
            hits += np.abs(res.params.flat() - truth.flat()) <= 1.96 * ac.stderr
        assert np.all(hits / reps >= 0.8), hits / reps
