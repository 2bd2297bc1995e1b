"""
Unit tests for the boosting service.

This module contains tests for the componentwise base learners, the
fixed-effect update, the potential random-effects structure, the Gibbs
sweep, the random-effect decision and complete fits.
"""
import os
import unittest
from dataclasses import replace
from unittest.mock import patch

import numpy as np

from config.hyperparams import Hyperparams, SimConfig
from models.dataset import Dataset
from models.state import GibbsSummary, PotentialState
from services.boosting_service import (
    BayesBoost,
    ComponentwiseFit,
    boost_fit,
    fit_componentwise,
    negative_gradient,
    predict,
    update_fixed,
)
from services.selection_service import conditional_aic as real_conditional_aic
from services.simulation_service import generate
from utils.distributions import RngStream
from utils.error_handling import ConfigError, FitAbortedError, NumericError
from utils.linalg import max_orthogonality_error

SLOW = os.environ.get("BAYESBOOST_SLOW_TESTS") == "1"

SMALL = dict(max_iter=12, zeta=2, patience=2, mcmc_samples=8, hampel_window=2)


def clustered(X, y=None, sizes=None, seed=0) -> Dataset:
    """Dataset with contiguous clusters of the given sizes."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sizes = sizes or [X.shape[0] // 2, X.shape[0] - X.shape[0] // 2]
    if y is None:
        y = np.random.default_rng(seed).standard_normal(X.shape[0])
    return Dataset(
        y=y,
        X=X,
        cluster_ids=np.repeat(np.arange(1, len(sizes) + 1), sizes),
        n_i=sizes,
        names=tuple(f"x{k}" for k in range(1, X.shape[1] + 1)),
    )


def simulated(design: str = "random_intercept", **overrides):
    cfg = SimConfig(design=design, m=12, n_i=6, p=6, tau=0.8, **overrides)
    return generate(cfg, RngStream(cfg.seed, 0))


class TestBaseLearners(unittest.TestCase):
    """Test cases for negative_gradient, fit_componentwise and update_fixed."""

    def setUp(self):
        """Set up test fixtures."""
        rng = np.random.default_rng(1)
        self.d = clustered(rng.standard_normal((8, 3)), y=np.array([2.0, 4.0, 1, 1, 1, 1, 1, 1]))
        self.state = BayesBoost(self.d, Hyperparams()).init_state()

    def test_negative_gradient(self):
        perfect = replace(self.state, fitted=self.d.y.copy())
        np.testing.assert_array_equal(negative_gradient(self.d.y, perfect), np.zeros(8))
        zero = replace(self.state, fitted=np.zeros(8))
        np.testing.assert_array_equal(negative_gradient(self.d.y, zero), self.d.y)
        partial = replace(self.state, fitted=np.ones(8))
        np.testing.assert_array_equal(negative_gradient(self.d.y, partial)[:2], [1.0, 3.0])

    def test_exact_linear_fit(self):
        """u linear in covariate 3 selects it with zero error."""
        u = 0.5 - 2.0 * self.d.X[:, 2]
        fit = fit_componentwise(u, self.d)
        self.assertEqual(fit.k_star, 3)
        self.assertAlmostEqual(fit.mse_kstar, 0.0, places=20)
        self.assertAlmostEqual(fit.beta_kstar[0], 0.5, places=12)
        self.assertAlmostEqual(fit.beta_kstar[1], -2.0, places=12)

    def test_three_points(self):
        d = clustered([1.0, 2.0, 3.0], sizes=[2, 1])
        fit = fit_componentwise(np.array([1.0, 2.0, 3.0]), d)
        self.assertEqual(fit.k_star, 1)
        self.assertAlmostEqual(fit.beta_kstar[0], 0.0, places=12)
        self.assertAlmostEqual(fit.beta_kstar[1], 1.0, places=12)
        self.assertAlmostEqual(fit.mse_kstar, 0.0, places=20)

    def test_orthogonal_ties_go_to_first(self):
        """Covariates orthogonal to u all fit var(u); the lowest index wins."""
        d = clustered(np.column_stack([[1.0, 1, -1, -1], [1.0, -1, -1, 1]]))
        u = np.array([1.0, -1.0, 1.0, -1.0])
        fit = fit_componentwise(u, d)
        self.assertEqual(fit.k_star, 1)
        np.testing.assert_allclose(fit.mse_fixed, [1.0, 1.0], atol=1e-12)
        self.assertAlmostEqual(fit.beta_kstar[1], 0.0, places=12)

    def test_zero_variance_covariate(self):
        """A constant covariate fits the intercept only and loses to a real fit."""
        d = clustered(np.column_stack([np.full(4, 3.0), [0.0, 1.0, 2.0, 4.0]]))
        u = np.array([0.0, 1.0, 2.0, 3.0])
        fit = fit_componentwise(u, d)
        self.assertEqual(fit.k_star, 2)
        self.assertAlmostEqual(fit.mse_fixed[0], np.var(u), places=12)

    def test_update_fixed(self):
        state = replace(self.state, beta=np.zeros(3))
        updated = update_fixed(state, 2, (1.0, 2.0), 0.3)
        np.testing.assert_allclose(updated.beta, [0.3, 0.0, 0.6])

    def test_update_with_zero_pair(self):
        updated = update_fixed(self.state, 1, (0.0, 0.0), 1.0)
        np.testing.assert_array_equal(updated.beta, self.state.beta)

    def test_updates_add_up(self):
        state = replace(self.state, beta=np.zeros(4))
        twice = update_fixed(update_fixed(state, 3, (0.5, -1.0), 0.3), 3, (0.5, -1.0), 0.3)
        np.testing.assert_allclose(twice.beta, [0.3, 0.0, 0.0, -0.6])


class TestInitialization(unittest.TestCase):
    """Test cases for the initial state and the corrected designs."""

    def test_initial_state(self):
        d = clustered([0.1, 0.2, 0.3, 0.5], y=np.array([1.0, 1.0, 3.0, 3.0]))
        state = BayesBoost(d, Hyperparams()).init_state()
        self.assertEqual(state.beta[0], 2.0)
        np.testing.assert_array_equal(state.beta[1:], [0.0])
        np.testing.assert_allclose(state.fitted, [1.0, 1.0, 3.0, 3.0])
        self.assertEqual(state.effects, (0,))
        np.testing.assert_array_equal(state.Q_mode, np.eye(1))

    def test_no_cluster_constant_covariates(self):
        """The intercept design is the raw indicator matrix."""
        rng = np.random.default_rng(2)
        d = clustered(rng.standard_normal((6, 2)), sizes=[3, 3])
        state = BayesBoost(d, Hyperparams()).init_state()
        np.testing.assert_array_equal(state.Z, state.Z_tilde)
        np.testing.assert_array_equal(state.Z[:, 0], [1, 1, 1, 0, 0, 0])

    def test_cluster_constant_covariate_is_projected_out(self):
        rng = np.random.default_rng(3)
        constant = np.repeat(rng.standard_normal(3), 3)
        d = clustered(np.column_stack([constant, rng.standard_normal(9)]), sizes=[3, 3, 3])
        booster = BayesBoost(d, Hyperparams())
        state = booster.init_state()
        self.assertEqual(booster.mask.indices, [1])
        self.assertLess(max_orthogonality_error(d.X[:, [0]], state.Z), 1e-10)
        self.assertNotIn(1, booster.candidates)

    def test_full_correction(self):
        rng = np.random.default_rng(4)
        d = clustered(rng.standard_normal((8, 2)))
        booster = BayesBoost(d, Hyperparams(correction="full"))
        design = booster.build_design(2)
        basis = np.column_stack([np.ones(8), d.X])
        self.assertLess(max_orthogonality_error(basis, design.Z), 1e-10)

    def test_fixed_structure(self):
        rng = np.random.default_rng(5)
        d = clustered(rng.standard_normal((8, 4)))
        state = BayesBoost(d, Hyperparams(re_mode="fixed", fixed_effects=(4, 2))).init_state()
        self.assertEqual(state.effects, (0, 2, 4))
        self.assertEqual(state.Q_mode.shape, (3, 3))
        self.assertEqual(state.Z.shape, (8, 6))

    def test_index_beyond_p(self):
        d = clustered(np.random.default_rng(6).standard_normal((6, 2)))
        with self.assertRaises(ConfigError):
            BayesBoost(d, Hyperparams(re_mode="fixed", fixed_effects=(5,)))


class TestPotentialStructure(unittest.TestCase):
    """Test cases for expand_potential_structure."""

    def setUp(self):
        """Set up test fixtures."""
        rng = np.random.default_rng(7)
        self.d = clustered(rng.standard_normal((10, 8)), sizes=[5, 5])
        self.booster = BayesBoost(self.d, Hyperparams())
        state = self.booster.init_state()
        beta = state.beta.copy()
        beta[[4, 7]] = 0.5
        self.state = replace(state, beta=beta, Q_mode=np.array([[0.7]]))

    def test_new_effect(self):
        pot = self.booster.expand_potential_structure(self.state, 4)
        self.assertTrue(pot.expanded)
        self.assertEqual(pot.effects, (0, 4))
        np.testing.assert_array_equal(pot.Q_init, [[0.7, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(pot.lambda0, np.eye(2))
        self.assertEqual(pot.Z.shape, (10, 4))

    def test_existing_effect(self):
        pot = self.booster.expand_potential_structure(self.state, 4)
        accepted = replace(self.state, effects=pot.effects, designs=pot.designs, Q_mode=pot.Q_init, lambda0=pot.lambda0)
        again = self.booster.expand_potential_structure(accepted, 4)
        self.assertFalse(again.expanded)
        np.testing.assert_array_equal(again.Z, accepted.Z)
        np.testing.assert_array_equal(again.Q_init, accepted.Q_mode)

    def test_two_step_growth(self):
        first = self.booster.expand_potential_structure(self.state, 4)
        accepted = replace(self.state, effects=first.effects, designs=first.designs, Q_mode=first.Q_init, lambda0=first.lambda0)
        second = self.booster.expand_potential_structure(accepted, 7)
        self.assertEqual(second.effects, (0, 4, 7))
        self.assertEqual(second.Q_init.shape, (3, 3))
        self.assertEqual(second.lambda0.shape, (3, 3))

    def test_closed_for_zero_coefficient(self):
        """A covariate without a fixed effect is not auditioned."""
        self.assertEqual(self.booster.expansion_blocker(self.state, 2), "closed")
        self.assertFalse(self.booster.expand_potential_structure(self.state, 2).expanded)

    def test_cap_on_random_slopes(self):
        booster = BayesBoost(self.d, Hyperparams(max_random_slopes=0))
        self.assertEqual(booster.expansion_blocker(self.state, 4), "closed")


class TestGibbsSweep(unittest.TestCase):
    """Test cases for gibbs_sweep."""

    def test_full_conditional_parameters(self):
        """a = b = 0.001, n = 4 and residuals (1, -1, 1, -1) give IG(2.001, 2.001)."""
        d = clustered([0.3, 0.1, 0.4, 0.2], y=np.array([1.0, -1.0, 1.0, -1.0]))
        booster = BayesBoost(d, Hyperparams())
        state = booster.init_state()
        pot = booster.expand_potential_structure(state, 1)
        ig_params, iw_params = [], []

        def fake_ig(params, rng):
            ig_params.append(params)
            return 1.0

        def fake_iw(params, rng):
            iw_params.append(params)
            return np.eye(params.dim)

        with patch("services.boosting_service.sample_mvn_precision", return_value=np.zeros(2)), \
                patch("services.boosting_service.sample_inverse_gamma", side_effect=fake_ig), \
                patch("services.boosting_service.sample_inverse_wishart", side_effect=fake_iw):
            summary = booster.gibbs_sweep(d.y, np.zeros(2), pot, n_samples=3)

        self.assertEqual(len(ig_params), 3)
        self.assertAlmostEqual(ig_params[0].shape, 2.001, places=12)
        self.assertAlmostEqual(ig_params[0].scale, 2.001, places=12)
        self.assertEqual(iw_params[0].dof, 1.0 + 2)
        np.testing.assert_array_equal(summary.Q_mode, np.eye(1))
        self.assertEqual(summary.sigma2_mode, 1.0)

    def test_wishart_dof(self):
        """v0 = 1 and m = 20 give 21 degrees of freedom."""
        rng = np.random.default_rng(8)
        d = clustered(rng.standard_normal((40, 2)), sizes=[2] * 20)
        booster = BayesBoost(d, Hyperparams())
        pot = booster.expand_potential_structure(booster.init_state(), 1)
        dofs = []

        def fake_iw(params, rng):
            dofs.append(params.dof)
            return np.eye(params.dim)

        with patch("services.boosting_service.sample_inverse_wishart", side_effect=fake_iw):
            booster.gibbs_sweep(d.y, np.zeros(3), pot, n_samples=2)
        self.assertEqual(dofs, [21.0, 21.0])

    def test_summary_shapes(self):
        d, _ = simulated("random_slope")
        booster = BayesBoost(d, Hyperparams(re_mode="fixed", fixed_effects=(3, 4)))
        state = booster.init_state()
        summary = booster.gibbs_sweep(d.y, state.beta, booster.expand_potential_structure(state, 3), n_samples=6)
        self.assertEqual(summary.T, 6)
        self.assertEqual(summary.gamma_samples.shape, (6, d.m * 3))
        self.assertEqual(summary.Q_samples.shape, (6, 3, 3))
        np.testing.assert_array_equal(summary.Q_mode, summary.Q_mode.T)
        self.assertGreater(np.linalg.eigvalsh(summary.Q_mode).min(), 0.0)
        self.assertGreater(summary.sigma2_mode, 0.0)

    @unittest.skipUnless(SLOW, "set BAYESBOOST_SLOW_TESTS=1")
    def test_recovers_error_variance(self):
        """With β at the truth, the σ² mode lands within 15% of 0.16."""
        cfg = SimConfig(design="random_intercept", m=50, n_i=10, p=4, tau=0.8, sigma=0.4)
        d, truth = generate(cfg, RngStream(1, 0))
        booster = BayesBoost(d, Hyperparams(), RngStream(1, 1))
        pot = booster.expand_potential_structure(booster.init_state(), 1)
        self.assertFalse(pot.expanded)
        summary = booster.gibbs_sweep(d.y, truth.beta_true, pot, n_samples=500)
        self.assertAlmostEqual(summary.sigma2_mode, 0.16, delta=0.15 * 0.16)

    @unittest.skipUnless(SLOW, "set BAYESBOOST_SLOW_TESTS=1")
    def test_matches_reference_sampler(self):
        """Random-intercept chain agrees with a scalar Gibbs sampler over 20000 sweeps."""
        rng = np.random.default_rng(12)
        m, n_i, sweeps = 5, 4, 20000
        cluster = np.repeat(np.arange(m), n_i)
        y = 1.0 + rng.normal(0.0, 0.8, m)[cluster] + rng.normal(0.0, 0.4, m * n_i)
        d = clustered(rng.standard_normal((m * n_i, 2)), y=y, sizes=[n_i] * m)
        h = Hyperparams()
        beta = np.array([1.0, 0.0, 0.0])

        booster = BayesBoost(d, h, RngStream(3))
        state = booster.init_state()
        pot = PotentialState(
            effects=(0,), designs=state.designs, Q_init=np.eye(1), lambda0=np.eye(1), sigma2_init=1.0,
        )
        summary = booster.gibbs_sweep(d.y, beta, pot, n_samples=sweeps)

        ref = np.random.default_rng(4)
        y_tilde = d.y - 1.0
        sums = np.bincount(cluster, weights=y_tilde)
        sigma2, tau2 = 1.0, 1.0
        ref_gamma = np.empty((sweeps, m))
        ref_sigma2 = np.empty(sweeps)
        for t in range(sweeps):
            var = 1.0 / (n_i / sigma2 + 1.0 / tau2)
            gamma = var * sums / sigma2 + np.sqrt(var) * ref.standard_normal(m)
            rss = np.sum((y_tilde - gamma[cluster]) ** 2)
            sigma2 = (h.b + 0.5 * rss) / ref.gamma(h.a + m * n_i / 2.0)
            tau2 = 0.5 * (h.lambda0_init + gamma @ gamma) / ref.gamma((h.v0 + m) / 2.0)
            ref_gamma[t] = gamma
            ref_sigma2[t] = sigma2

        def batch_se(draws):
            means = draws.reshape(50, -1, *draws.shape[1:]).mean(axis=1)
            return means.std(axis=0, ddof=1) / np.sqrt(50)

        for engine, reference in ((summary.sigma2_samples, ref_sigma2), (summary.gamma_samples, ref_gamma)):
            gap = np.abs(engine.mean(axis=0) - reference.mean(axis=0))
            bound = 3.0 * np.sqrt(batch_se(engine) ** 2 + batch_se(reference) ** 2)
            np.testing.assert_array_less(gap, bound)


class TestRandomEffectDecision(unittest.TestCase):
    """Test cases for random_effect_decision."""

    def setUp(self):
        """Set up test fixtures."""
        self.d = clustered([0.5, 1.0, -0.3, 2.0, 0.7], sizes=[3, 2])
        self.booster = BayesBoost(self.d, Hyperparams())
        state = self.booster.init_state()
        self.state = replace(state, beta=np.array([0.0, 0.4]))
        self.pot = self.booster.expand_potential_structure(self.state, 1)
        self.summary = GibbsSummary(
            effects=(0, 1),
            gamma_samples=np.zeros((2, 4)),
            sigma2_samples=np.array([0.5, 0.5]),
            Q_samples=np.stack([np.eye(2), np.eye(2)]),
            gamma_mode=np.zeros(4),
            sigma2_mode=0.5,
            Q_mode_raw=np.eye(2),
            Q_mode=np.eye(2),
        )
        # mean of u² is 0.8 with γ = 0 and a zero base learner
        self.u = np.array([1.0, 1.0, 1.0, 1.0, 0.0])

    def _fit(self, mse: float) -> ComponentwiseFit:
        return ComponentwiseFit(k_star=1, beta_kstar=(0.0, 0.0), mse_fixed=np.array([mse]))

    def test_strict_improvement_accepts(self):
        decision = self.booster.random_effect_decision(self.state, self._fit(1.0), self.u, self.pot, self.summary)
        self.assertTrue(decision.accepted)
        self.assertAlmostEqual(decision.mse_random, 0.8, places=12)
        self.assertEqual(decision.effects, (0, 1))

    def test_tie_rejects(self):
        decision = self.booster.random_effect_decision(self.state, self._fit(0.8), self.u, self.pot, self.summary)
        self.assertEqual(decision.decision, "rejected")
        self.assertEqual(decision.effects, (0,))
        self.assertEqual(decision.summary.Q_mode.shape, (1, 1))
        self.assertEqual(decision.summary.gamma_mode.size, 2)
        self.assertEqual(decision.summary.sigma2_mode, 0.5)

    def test_no_audition(self):
        unexpanded = PotentialState(
            effects=self.state.effects, designs=self.state.designs, Q_init=self.state.Q_mode,
            lambda0=self.state.lambda0, sigma2_init=1.0,
        )
        summary = self.summary.subset((0,))
        decision = self.booster.random_effect_decision(self.state, self._fit(1.0), self.u, unexpanded, summary)
        self.assertIsNone(decision.mse_random)
        self.assertIs(decision.summary, summary)
        self.assertEqual(decision.effects, (0,))


class TestBoostFit(unittest.TestCase):
    """Test cases for complete fits."""

    @classmethod
    def setUpClass(cls):
        cls.d, cls.truth = simulated("random_slope")
        cls.h = Hyperparams(**SMALL)
        cls.trace = boost_fit(cls.d, cls.h)

    def test_trace_shape(self):
        self.assertEqual(len(self.trace), self.h.max_iter)
        self.assertEqual(self.trace.beta_path.shape, (self.h.max_iter, self.d.p + 1))
        self.assertTrue(1 <= self.trace.stopping.s <= self.h.max_iter)
        self.assertIs(self.trace.final_summary, self.trace.summaries[self.trace.stopping.s - 1])

    def test_sparsity(self):
        """Coefficients of never-selected covariates stay exactly zero."""
        chosen = set()
        for record in self.trace.records:
            chosen.add(record.k_star)
            untouched = [k for k in range(1, self.d.p + 1) if k not in chosen]
            np.testing.assert_array_equal(record.beta[untouched], 0.0)

    def test_random_slopes_have_fixed_effects(self):
        for record in self.trace.records:
            for effect in record.effects[1:]:
                self.assertNotEqual(record.beta[effect], 0.0)

    def test_reproducible(self):
        again = boost_fit(self.d, self.h)
        np.testing.assert_array_equal(again.caic_raw, self.trace.caic_raw)
        np.testing.assert_array_equal(again.beta_path, self.trace.beta_path)
        self.assertEqual(again.stopping, self.trace.stopping)

    def test_designs_stay_orthogonal_and_structure_grows(self):
        """Every block stays orthogonal to its basis and E never shrinks."""
        for correction in ("appendix", "full"):
            with self.subTest(correction=correction):
                booster = BayesBoost(self.d, Hyperparams(**SMALL, correction=correction))
                state = booster.init_state()
                for _ in range(booster.h.max_iter):
                    previous = state.effects
                    state, record, _ = booster.step(state)
                    self.assertLessEqual(set(previous), set(state.effects))
                    self.assertEqual(record.effects, state.effects)
                    for effect, design in zip(state.effects, state.designs):
                        scale = max(np.abs(design.Z).max(), 1.0)
                        self.assertLessEqual(
                            max_orthogonality_error(design.projector_basis, design.Z), 1e-8 * scale
                        )
                        np.testing.assert_array_equal(
                            design.projector_basis, booster.correction_basis(effect)
                        )

    def test_predict_matches_final_state(self):
        np.testing.assert_allclose(predict(self.trace, self.d), self.trace.final_state.fitted)

    def test_max_iter_guard(self):
        h = Hyperparams.model_construct(**{**Hyperparams().model_dump(), "max_iter": 0})
        with self.assertRaises(ConfigError):
            boost_fit(self.d, h)

    def test_failed_iteration_keeps_partial_trace(self):
        calls = {"n": 0}

        def flaky(*args):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NumericError("singular")
            return real_conditional_aic(*args)

        with patch("services.boosting_service.conditional_aic", side_effect=flaky):
            with self.assertRaises(FitAbortedError) as ctx:
                boost_fit(self.d, self.h)
        self.assertEqual(len(ctx.exception.partial_trace), 2)
        self.assertEqual(ctx.exception.exit_code, 4)

    @unittest.skipUnless(SLOW, "set BAYESBOOST_SLOW_TESTS=1")
    def test_pure_noise_selects_little(self):
        """On pure noise at most one covariate is selected in 90% of runs."""
        sparse = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            d = clustered(rng.standard_normal((100, 10)), y=rng.standard_normal(100), sizes=[10] * 10)
            trace = boost_fit(d, Hyperparams(seed=seed, max_iter=40))
            sparse += len(trace.final_state.selected_fixed()) <= 1
        self.assertGreaterEqual(sparse, 18)


if __name__ == "__main__":
    unittest.main()
