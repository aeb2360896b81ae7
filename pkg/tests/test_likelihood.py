"""Residuals, weighted multi-experiment likelihood, and posterior evaluation."""

import math
from dataclasses import replace

import numpy as np
import pytest

from daebayes.dae import SolverConfig
from daebayes.experiments import MeasurementSet
from daebayes.likelihood import FidelityConfig, Posterior, noise_ratio_diagnostic
from daebayes.params import to_latent
from daebayes.rng import substream

MON = (2, 4, 5, 6, 7, 8, 9)


def clone_measurements(measurements, **overrides):
    out = []
    for m in measurements:
        kw = dict(times=m.times, y=m.y, clean=m.clean, sigma_meas=m.sigma_meas,
                  sigma_eff=m.sigma_eff, weights=m.weights, schedule=m.schedule,
                  windows=m.windows)
        kw.update({k: v(m) if callable(v) else v for k, v in overrides.items()})
        out.append(MeasurementSet(**kw))
    return out


class TestResiduals:
    def test_self_consistency_noiseless(self, pipe_clean):
        eta_t = pipe_clean.eta_true
        res = pipe_clean.posterior.residuals(eta_t, "exact")
        assert max(np.max(np.abs(r)) for r in res) <= 1e-6

    def test_whiteness_at_truth(self, pipe7):
        res = pipe7.posterior.residuals(pipe7.eta_true, "exact")
        z = np.concatenate([(r / m.sigma_meas[:, None]).ravel()
                            for r, m in zip(res, pipe7.measurements)])
        assert z.var() == pytest.approx(1.0, rel=0.15)

    def test_coarse_grid_shape_and_mapping(self, posterior7):
        fc = posterior7.fidelity
        idx = fc.coarse_subset(63)
        assert idx.size == 42
        np.testing.assert_array_equal(idx[:8], [0, 1, 3, 4, 6, 7, 9, 10])
        np.testing.assert_array_equal(idx, np.floor(1.5 * np.arange(42)).astype(int))
        res = posterior7.residuals(np.zeros(21), "coarse")
        assert res[0].shape == (17, 42)


class TestLogLikelihood:
    def test_zero_residuals_give_zero(self, pipe_clean):
        # noiseless data at the true parameters: residuals are solver noise
        ll = pipe_clean.posterior.log_likelihood(pipe_clean.eta_true, "exact")
        assert ll == pytest.approx(0.0, abs=1e-6)

    def test_single_unit_residual(self, pipe_clean, case9):
        post = pipe_clean.posterior
        pred = post._predict(pipe_clean.eta_true, "exact")
        meas = clone_measurements(
            pipe_clean.measurements,
            weights=lambda m: np.ones_like(m.weights))
        # one entry offset by exactly sigma_eff; all other residuals ~ 0
        y0 = pred[0].copy()
        y0[3, 10] += meas[0].sigma_eff[3]
        meas[0] = replace_y(meas[0], y0)
        post2 = Posterior(case9, post.prior, meas, MON, post.fidelity)
        ll = post2.log_likelihood(pipe_clean.eta_true, "exact")
        assert ll == pytest.approx(-0.5, abs=1e-6)

    def test_matches_triple_loop_reference(self, pipe7):
        post = pipe7.posterior
        eta = np.zeros(21)
        res = post.residuals(eta, "exact")
        total = 0.0
        for m, r in zip(pipe7.measurements[:2], res[:2]):
            p, nt = r.shape
            for j in range(p):
                for k in range(nt):
                    total += m.weights[j, k] * r[j, k] ** 2 / m.sigma_eff[j] ** 2
        expected = -0.5 * total
        post2 = Posterior(pipe7.case, post.prior, pipe7.measurements[:2], MON,
                          post.fidelity)
        assert post2.log_likelihood(eta, "exact") == pytest.approx(expected, rel=1e-10)

    def test_experiment_order_invariance(self, pipe7):
        post = pipe7.posterior
        reordered = Posterior(pipe7.case, post.prior,
                              list(reversed(pipe7.measurements)), MON, post.fidelity)
        eta = np.zeros(21)
        assert reordered.log_likelihood(eta) == pytest.approx(
            post.log_likelihood(eta), rel=1e-12)

    def test_channel_permutation_invariance_of_sum(self, pipe7):
        post = pipe7.posterior
        res = post.residuals(np.zeros(21), "exact")
        m = pipe7.measurements[0]
        perm = substream(0, "perm").permutation(17)
        direct = np.sum(m.weights * res[0] ** 2 / m.sigma_eff[:, None] ** 2)
        permuted = np.sum(m.weights[perm] * res[0][perm] ** 2
                          / m.sigma_eff[perm, None] ** 2)
        assert permuted == pytest.approx(direct, rel=1e-12)

    def test_sigma_scaling_rescales_quadratically(self, pipe7, case9):
        post = pipe7.posterior
        eta = np.zeros(21)
        base = post.log_likelihood(eta)
        scaled = clone_measurements(pipe7.measurements,
                                    sigma_eff=lambda m: 3.0 * m.sigma_eff)
        post2 = Posterior(case9, post.prior, scaled, MON, post.fidelity)
        assert post2.log_likelihood(eta) == pytest.approx(base / 9.0, rel=1e-12)

    def test_unit_weights_match_unsegmented_form(self, pipe7, case9):
        post = pipe7.posterior
        meas = clone_measurements(pipe7.measurements[:1],
                                  weights=lambda m: np.ones_like(m.weights))
        post2 = Posterior(case9, post.prior, meas, MON, post.fidelity)
        eta = np.zeros(21)
        r = post2.residuals(eta, "exact")[0]
        m = meas[0]
        expected = -0.5 * float(np.sum(r ** 2 / m.sigma_eff[:, None] ** 2))
        assert post2.log_likelihood(eta) == pytest.approx(expected, rel=1e-12)


class TestLogPosterior:
    def test_box_gate_skips_forward_solves(self, posterior7):
        eta = np.zeros(21)
        eta[0] = posterior7.prior.eta_max[0] + 1.0
        before = posterior7.n_pf_solves
        ev = posterior7.log_posterior(eta, "exact")
        assert ev.log_post == -math.inf
        assert not ev.feasible
        assert ev.n_forward_solves == 0
        assert posterior7.n_pf_solves == before

    def test_sum_of_parts(self, posterior7):
        eta = np.full(21, 0.1)
        ev = posterior7.log_posterior(eta, "exact")
        assert ev.feasible
        assert ev.log_post == pytest.approx(ev.log_like + ev.log_prior, abs=1e-12)
        assert ev.log_prior == pytest.approx(-0.5 * 21 * 0.01)
        assert ev.n_forward_solves == 4

    def test_step_divergence_becomes_minus_inf(self, pipe7, case9):
        post = pipe7.posterior
        broken = FidelityConfig(
            decim_exact=16, decim_coarse=24,
            exact=post.fidelity.exact,
            coarse=SolverConfig(dt=0.08, newton_tol=1e-30, newton_max_iter=2,
                                fidelity="coarse"))
        post2 = Posterior(case9, post.prior, pipe7.measurements, MON, broken)
        ev = post2.log_posterior(np.zeros(21), "coarse")
        assert ev.log_post == -math.inf
        assert not ev.feasible
        assert ev.n_forward_solves == 1     # failed inside the first experiment

    def test_fidelity_increment_correlation(self, pipe7, case9):
        # nearby-eta increments of coarse and exact log-posteriors co-move
        post = Posterior(case9, pipe7.prior, pipe7.measurements[:1], MON,
                         pipe7.posterior.fidelity)
        rng = substream(1, "fidcorr")
        base = pipe7.eta_true
        le0 = post.log_posterior(base, "exact").log_post
        lc0 = post.log_posterior(base, "coarse").log_post
        d_e, d_c = [], []
        for k in range(50):
            idx = {0: np.arange(0, 6), 1: np.arange(6, 12),
                   2: np.arange(12, 21)}[k % 3]
            eta = base.copy()
            eta[idx] += rng.normal(size=idx.size) * 0.08
            le = post.log_posterior(eta, "exact").log_post
            lc = post.log_posterior(eta, "coarse").log_post
            if np.isfinite(le) and np.isfinite(lc):
                d_e.append(le - le0)
                d_c.append(lc - lc0)
        assert len(d_e) >= 45
        assert np.corrcoef(d_e, d_c)[0, 1] > 0.9


class TestDiagnostics:
    def test_full_likelihood_below_quadratic(self, pipe7):
        post = pipe7.posterior
        eta = pipe7.eta_true
        assert post.log_likelihood_full(eta) < post.log_likelihood(eta)

    def test_noise_ratio_scale(self, pipe7):
        ratio = noise_ratio_diagnostic(pipe7.posterior, pipe7.eta_true)
        assert 1e3 <= ratio <= 1e6


def replace_y(m: MeasurementSet, y: np.ndarray) -> MeasurementSet:
    return MeasurementSet(times=m.times, y=y, clean=m.clean,
                          sigma_meas=m.sigma_meas, sigma_eff=m.sigma_eff,
                          weights=m.weights, schedule=m.schedule, windows=m.windows)
