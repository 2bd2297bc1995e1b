"""
Unit tests for the model selection service.

This module contains tests for the conditional AIC, the Hampel filter and
the two stopping rules.
"""
import unittest

import numpy as np

from config.hyperparams import Hyperparams
from models.dataset import Dataset
from models.state import ModelState
from services.selection_service import (
    SelectionService,
    caic_value,
    conditional_aic,
    hampel_filter,
    minimum_stop,
    patience_stop,
    random_effects_hat_trace,
    select_stopping,
)
from utils.error_handling import NumericError, PreconditionError
from utils.linalg import CorrectedDesign


class TestCaic(unittest.TestCase):
    """Test cases for the conditional AIC."""

    def test_density_arithmetic(self):
        """n=2, zero residuals, σ²=1, ρ=1."""
        caic, log_lik = caic_value(rss=0.0, n=2, sigma2=1.0, rho=1.0)
        self.assertAlmostEqual(log_lik, -np.log(2.0 * np.pi), places=12)
        self.assertAlmostEqual(caic, 2.0 * np.log(2.0 * np.pi) + 4.0, places=12)
        self.assertAlmostEqual(caic, 7.6758, places=4)

    def test_penalty_is_linear(self):
        low, _ = caic_value(rss=3.0, n=10, sigma2=0.5, rho=2.0)
        high, _ = caic_value(rss=3.0, n=10, sigma2=0.5, rho=3.0)
        self.assertAlmostEqual(high - low, 2.0, places=12)

    def test_hat_trace_identity_design(self):
        """Z = I₄, σ² = 1, Q = 1 gives Σ_γ = I/2 and trace 2."""
        trace, repaired = random_effects_hat_trace(np.eye(4), np.array([[1.0]]), 1.0)
        self.assertAlmostEqual(trace, 2.0, places=12)
        self.assertFalse(repaired)

    def test_hat_trace_vanishes_with_q(self):
        trace, _ = random_effects_hat_trace(np.eye(4), np.array([[1e-10]]), 1.0)
        self.assertLess(trace, 1e-8)

    def test_conditional_aic(self):
        """Exact fit with one nonzero slope and identity random-effects design."""
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        d = Dataset(y=[1.0, 3.0, 5.0, 7.0], X=X, cluster_ids=[1, 2, 3, 4], n_i=[1, 1, 1, 1], names=("x1",))
        design = CorrectedDesign(Z=np.eye(4), Z_tilde=np.eye(4), projector_basis=np.zeros((4, 0)))
        state = ModelState(
            beta=np.array([1.0, 2.0]), effects=(0,), designs=(design,), Q_mode=np.array([[1.0]]),
            sigma2_mode=1.0, gamma_mode=np.zeros(4), lambda0=np.eye(1), iteration=1, fitted=d.y.copy(),
        )
        result = conditional_aic(d.y, d, state)
        self.assertAlmostEqual(result.effective_dof, 1.0 + 1.0 + 2.0, places=12)
        self.assertAlmostEqual(result.log_likelihood, -2.0 * np.log(2.0 * np.pi), places=12)
        self.assertAlmostEqual(result.caic, 4.0 * np.log(2.0 * np.pi) + 2.0 * 5.0, places=10)

    def test_non_positive_sigma2(self):
        X = np.array([[0.0], [1.0]])
        d = Dataset(y=[0.0, 1.0], X=X, cluster_ids=[1, 2], n_i=[1, 1], names=("x1",))
        design = CorrectedDesign(Z=np.eye(2), Z_tilde=np.eye(2), projector_basis=np.zeros((2, 0)))
        state = ModelState(
            beta=np.zeros(2), effects=(0,), designs=(design,), Q_mode=np.eye(1), sigma2_mode=0.0,
            gamma_mode=np.zeros(2), lambda0=np.eye(1), iteration=1, fitted=np.zeros(2),
        )
        with self.assertRaises(NumericError):
            conditional_aic(d.y, d, state)


class TestHampelFilter(unittest.TestCase):
    """Test cases for hampel_filter."""

    def test_constant_unchanged(self):
        np.testing.assert_array_equal(hampel_filter([2.5] * 9, 3, 2.0), [2.5] * 9)

    def test_spike_replaced(self):
        """Median 1 and MAD 0 around the spike."""
        filtered = hampel_filter([1, 1, 1, 10, 1, 1, 1], 3, 2.0)
        np.testing.assert_array_equal(filtered, [1, 1, 1, 1, 1, 1, 1])

    def test_linear_unchanged(self):
        series = np.arange(1.0, 10.0)
        np.testing.assert_array_equal(hampel_filter(series, 2, 3.0), series)

    def test_idempotent(self):
        series = np.arange(40.0)
        series[[5, 17, 30]] += 25.0
        once = hampel_filter(series, 3, 2.0)
        np.testing.assert_array_equal(hampel_filter(once, 3, 2.0), once)

    def test_preconditions(self):
        with self.assertRaises(PreconditionError):
            hampel_filter([], 3, 2.0)
        with self.assertRaises(PreconditionError):
            hampel_filter([1.0, 2.0], 0, 2.0)


class TestStoppingRules(unittest.TestCase):
    """Test cases for patience_stop, minimum_stop and select_stopping."""

    def test_patience_valley(self):
        """Minimum 7 at index 4, then two non-improvements."""
        result = patience_stop([10, 9, 8, 7, 8, 9, 10], alpha=2, zeta=0)
        self.assertEqual(result.s, 4)
        self.assertEqual(result.caic_at_s, 7.0)
        self.assertTrue(result.stabilized)

    def test_patience_end_of_series(self):
        """A strictly decreasing series stops at its last index."""
        result = patience_stop(np.arange(12.0, 0.0, -1.0), alpha=3, zeta=0)
        self.assertEqual(result.s, 12)
        self.assertFalse(result.stabilized)

    def test_patience_flat_tail(self):
        """The first compared index wins when the next value is equal."""
        alpha, zeta = 1, 2
        series = [9.0, 8.0, 7.0, 5.0, 5.0, 5.0]
        result = patience_stop(series, alpha=alpha, zeta=zeta)
        self.assertEqual(result.s, alpha + zeta + 1)

    def test_patience_is_causal(self):
        """Values after s + α do not change the result."""
        series = np.array([10, 9, 8, 7, 8, 9, 10, 3, 1], dtype=float)
        base = patience_stop(series, alpha=2, zeta=0)
        changed = series.copy()
        changed[base.s + 2:] = -100.0
        self.assertEqual(patience_stop(changed, alpha=2, zeta=0).s, base.s)

    def test_patience_too_short(self):
        with self.assertRaises(PreconditionError):
            patience_stop([1.0, 2.0, 3.0], alpha=2, zeta=0)

    def test_minimum_stop(self):
        """The least value after ζ, earliest on ties."""
        result = minimum_stop([0.0, 5.0, 3.0, 2.0, 2.0, 4.0], zeta=1)
        self.assertEqual(result.s, 4)
        self.assertEqual(result.method, "min")

    def test_select_stopping_filters_first(self):
        """A single spike below the valley does not become the stopping point."""
        raw = [20, 19, 18, 17, 16, 15, 14, 13, 12, 11, 10, 9, 8, 9, 10, 11, 12, 13, 14, 15]
        raw[5] = -50
        h = Hyperparams(max_iter=20, zeta=0, patience=3, hampel_window=3)
        series, stopping = select_stopping(raw, h)
        self.assertEqual(series.filtered[5], 14.0)
        self.assertEqual(stopping.s, 13)

    def test_select_stopping_min(self):
        raw = [20, 19, 18, 17, 16, 15, 14, 13, 12, 11, 10, 9, 8, 9, 10, 11, 12, 13, 14, 15]
        h = Hyperparams(max_iter=20, zeta=0, patience=3, hampel_window=3, stopping="min")
        _, stopping = select_stopping(raw, h)
        self.assertEqual(stopping.s, 13)

    def test_selection_service_uses_configured_rule(self):
        raw = [20, 19, 18, 17, 16, 15, 14, 13, 12, 11, 10, 9, 8, 9, 10, 11, 12, 13, 14, 15]
        for rule in ("patience", "min"):
            h = Hyperparams(max_iter=20, zeta=0, patience=3, hampel_window=3, stopping=rule)
            series, stopping = SelectionService(h).select(raw)
            self.assertEqual((stopping.s, stopping.method), (13, rule))
            np.testing.assert_array_equal(series.raw, raw)


if __name__ == "__main__":
    unittest.main()
