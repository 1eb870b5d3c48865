"""Tests for the diversity objective and its finite-difference machinery."""

import numpy as np
import pytest

from deliberant.errors import NonDeterministicEvaluator, SingleViewpoint
from deliberant.selfgame import (
    SelfGameConfig,
    central_difference_gradient,
    estimate_gradient,
    five_point_gradient,
    run_selfgame,
    selfgame_objective,
)


class TestObjective:
    def test_hand_evaluated_gap(self):
        # (0.9 - mean(0.5, 0.5))^2 = 0.16
        assert selfgame_objective(0, [0.9, 0.5, 0.5]) == pytest.approx(0.16)

    def test_equal_scores_zero_for_every_index(self):
        for k in range(4):
            assert selfgame_objective(k, [0.3] * 4) == pytest.approx(0.0)

    def test_maximal_spread_two_viewpoints(self):
        assert selfgame_objective(0, [1.0, 0.0]) == pytest.approx(1.0)

    def test_single_viewpoint_undefined(self):
        with pytest.raises(SingleViewpoint):
            selfgame_objective(0, [0.5])

    def test_symmetric_under_peer_permutation(self):
        rng = np.random.default_rng(43)
        scores = rng.uniform(size=5)
        value = selfgame_objective(2, scores)
        for _ in range(10):
            perm = scores.copy()
            others = np.delete(np.arange(5), 2)
            shuffled = rng.permutation(others)
            perm[others] = scores[shuffled]
            assert selfgame_objective(2, perm) == pytest.approx(value)


class TestGradientEstimation:
    def test_flat_function_gives_zero(self):
        grad = central_difference_gradient(lambda x: 7.0, np.ones(6), 1e-3)
        np.testing.assert_array_equal(grad, np.zeros(6))

    def test_quadratic_matches_analytic(self):
        # f(x) = ||x||^2 has gradient 2x; central differences are exact
        # for quadratics up to round-off.
        rng = np.random.default_rng(47)
        x = rng.normal(size=8)
        grad = central_difference_gradient(lambda v: float(v @ v), x, 1e-3)
        np.testing.assert_allclose(grad, 2 * x, rtol=1e-6)

    def test_objective_gradient_via_substituted_scores(self):
        # Scores engineered so the objective equals ||omega||^2 exactly.
        def evaluate(omega):
            return np.array([float(np.linalg.norm(omega)), 0.0])

        x = np.array([0.3, -0.4, 0.2])
        grad = estimate_gradient(0, x, evaluate, fd_step=1e-4)
        np.testing.assert_allclose(grad, 2 * x, rtol=1e-5)

    def test_matches_five_point_oracle_on_smooth_function(self):
        rng = np.random.default_rng(53)
        a = rng.normal(size=5)

        def f(x):
            return float(np.sin(x @ a) + 0.5 * (x @ x))

        x = rng.normal(size=5)
        coarse = central_difference_gradient(f, x, 1e-3)
        oracle = five_point_gradient(f, x, 1e-3)
        np.testing.assert_allclose(coarse, oracle, rtol=1e-4)

    def test_nondeterministic_evaluator_detected(self):
        calls = iter(range(1000))

        def jittery(omega):
            return np.array([0.5 + next(calls) * 1e-6, 0.1])

        with pytest.raises(NonDeterministicEvaluator):
            estimate_gradient(0, np.zeros(3), jittery, 1e-3, probe_determinism=True)


class TestRunSelfGame:
    def _quadratic_scores(self, centers):
        # Score of viewpoint k is a smooth bump around its own center:
        # the farther omega moves from the shared origin, the higher.
        def score_fn(k, omega):
            return float(np.exp(-np.sum((omega - centers[k]) ** 2)))

        return score_fn

    def test_eta_zero_is_bitwise_noop(self):
        omegas = np.random.default_rng(59).normal(size=(3, 4))
        config = SelfGameConfig(eta=0.0, rounds=2)
        updated, log = run_selfgame(omegas, self._quadratic_scores(np.zeros((3, 4))), config)
        assert updated.tobytes() == omegas.tobytes()
        assert len(log) == 2

    def test_symmetric_start_yields_negligible_update(self):
        # Identical weights give identical scores, a stationary point of
        # the squared-difference objective.
        omegas = np.tile(np.array([0.2, -0.1, 0.3, 0.0]), (3, 1))
        config = SelfGameConfig(eta=0.01, rounds=1, fd_step=1e-3)
        updated, log = run_selfgame(omegas, self._quadratic_scores(np.zeros((3, 4))), config)
        assert float(np.max(np.abs(updated - omegas))) < 1e-6
        np.testing.assert_allclose(log[0]["objectives"], 0.0, atol=1e-12)

    def test_rounds_zero_returns_input(self):
        omegas = np.random.default_rng(61).normal(size=(2, 3))
        updated, log = run_selfgame(
            omegas, self._quadratic_scores(np.zeros((2, 3))), SelfGameConfig(rounds=0)
        )
        np.testing.assert_array_equal(updated, omegas)
        assert log == []

    def test_single_viewpoint_skipped(self):
        omegas = np.ones((1, 3))
        updated, log = run_selfgame(
            omegas, self._quadratic_scores(np.zeros((1, 3))), SelfGameConfig()
        )
        np.testing.assert_array_equal(updated, omegas)
        assert log == []

    def test_small_step_never_decreases_objective(self):
        # Ascent property: with a tiny step and peers frozen, the updated
        # viewpoint's objective cannot drop (beyond fd noise).
        rng = np.random.default_rng(67)
        centers = rng.normal(size=(3, 4))
        omegas = rng.normal(size=(3, 4)) * 0.5
        score_fn = self._quadratic_scores(centers)
        config = SelfGameConfig(eta=1e-4, rounds=1, fd_step=1e-4)
        scores_before = np.array([score_fn(k, omegas[k]) for k in range(3)])
        updated, _ = run_selfgame(omegas, score_fn, config)
        for k in range(3):
            before = selfgame_objective(k, scores_before)
            probe = scores_before.copy()
            probe[k] = score_fn(k, updated[k])
            after = selfgame_objective(k, probe)
            assert after >= before - 1e-8

    def test_diversity_spread_does_not_decrease(self):
        rng = np.random.default_rng(71)
        centers = rng.normal(size=(3, 4))
        omegas = rng.normal(size=(3, 4)) * 0.3
        score_fn = self._quadratic_scores(centers)
        before = np.array([score_fn(k, omegas[k]) for k in range(3)])
        updated, _ = run_selfgame(omegas, score_fn, SelfGameConfig(eta=0.01, rounds=1))
        after = np.array([score_fn(k, updated[k]) for k in range(3)])

        def mean_pairwise_gap(scores):
            gaps = [
                abs(scores[i] - scores[j]) for i in range(3) for j in range(i + 1, 3)
            ]
            return float(np.mean(gaps))

        assert mean_pairwise_gap(after) >= mean_pairwise_gap(before) - 1e-6
