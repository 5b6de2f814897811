import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_problem
from qbrrr.errors import InvalidInputError
from qbrrr.model import (ObservationSet, RrrProblem, center_columns,
                         clamp_projection, data_grad, data_log_density,
                         data_terms, default_truncation, empirical_risk,
                         weighted_frobenius_sq)

finite = st.floats(-50, 50, allow_nan=False)
mats = arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite)


def risk_loop(prob, M):
    XM = prob.X @ M
    total = 0.0
    for a, b, y in zip(prob.obs.rows, prob.obs.cols, prob.obs.values):
        f = min(prob.C, max(-prob.C, XM[a, b]))
        total += (y - f) ** 2
    return total / prob.obs.n


class TestClamp:
    def test_inside_is_identity(self):
        np.testing.assert_array_equal(clamp_projection([[0.5, -0.2]], 1.0), [[0.5, -0.2]])

    def test_clamps(self):
        np.testing.assert_array_equal(clamp_projection([[3, -7]], 2.0), [[2, -2]])

    def test_nearest_point_by_grid_search(self, rng):
        A = rng.normal(scale=2, size=(4, 3))
        P = clamp_projection(A, 1.0)
        grid = np.linspace(-1, 1, 41)
        # the objective separates by entry, so a per-entry grid search suffices
        brute = np.array([[grid[np.argmin((grid - a) ** 2)] for a in row] for row in A])
        assert np.all(np.abs(P - brute) <= 0.025 + 1e-12)
        assert np.sum((A - P) ** 2) <= np.sum((A - brute) ** 2) + 1e-12

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            clamp_projection([[np.nan]], 1.0)
        with pytest.raises(InvalidInputError):
            clamp_projection([[1.0]], 0.0)

    @given(mats, st.floats(0.01, 20))
    def test_idempotent(self, A, C):
        P = clamp_projection(A, C)
        np.testing.assert_array_equal(clamp_projection(P, C), P)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1),
           st.floats(0.01, 5))
    def test_nonexpansive(self, r, c, seed, C):
        g = np.random.default_rng(seed)
        A, B = g.normal(scale=3, size=(2, r, c))
        dP = clamp_projection(A, C) - clamp_projection(B, C)
        assert np.linalg.norm(dP) <= np.linalg.norm(A - B) + 1e-12


class TestObservationSet:
    def test_grid_and_duplicates(self):
        obs = ObservationSet([0, 0], [1, 1], [1.0, 2.0])
        with pytest.raises(InvalidInputError, match="duplicate"):
            obs.validate(2, 2)
        ObservationSet([0, 0], [1, 1], [1.0, 2.0], with_replacement=True).validate(2, 2)
        with pytest.raises(InvalidInputError, match=r"\(3, 1\)"):
            ObservationSet([2], [0], [1.0]).validate(2, 2)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            ObservationSet([], [], [])

    def test_matrix_round_trip_with_counts(self):
        Z = np.array([[1.0, np.nan], [np.nan, 4.0]])
        counts = np.array([[2, 0], [0, 1]])
        obs = ObservationSet.from_matrix(Z, counts, with_replacement=True)
        assert obs.n == 3
        np.testing.assert_array_equal(obs.counts(2, 2), counts)
        np.testing.assert_array_equal(obs.to_matrix(2, 2), Z)

    def test_problem_checks(self, rng):
        obs = ObservationSet([0], [0], [1.0])
        with pytest.raises(InvalidInputError):
            RrrProblem(np.ones((2, 2)), obs, 2, lam=-1.0)
        with pytest.raises(InvalidInputError):
            RrrProblem(np.ones((2, 2)), obs, 2, lam=1.0, tau=0.0)
        with pytest.raises(InvalidInputError):
            RrrProblem(np.ones((2, 2)), ObservationSet([5], [0], [1.0]), 2, lam=1.0)

    def test_default_truncation(self):
        obs = ObservationSet([0, 1], [0, 0], [-3.0, 2.0])
        assert default_truncation(obs) == 30.0


class TestRisk:
    def test_zero_at_truth(self, rng):
        X = rng.normal(size=(5, 3))
        M = rng.normal(size=(3, 2))
        Z = X @ M
        obs = ObservationSet.from_matrix(Z)
        prob = RrrProblem(X, obs, 2, lam=1.0)
        assert empirical_risk(prob, M) == pytest.approx(0.0, abs=1e-24)
        assert data_log_density(prob, M) == pytest.approx(0.0, abs=1e-22)

    def test_single_observation(self):
        prob = RrrProblem(np.ones((1, 1)), ObservationSet([0], [0], [1.0]), 1,
                          lam=1.0, C=10.0)
        assert empirical_risk(prob, np.zeros((1, 1))) == 1.0

    def test_matches_loop(self, rng):
        prob = random_problem(rng, 5, 4, 3, C=1.0)
        M = rng.normal(size=(4, 3))
        assert empirical_risk(prob, M) == pytest.approx(risk_loop(prob, M), abs=1e-12)

    def test_log_density_is_scaled_risk(self, rng):
        prob = random_problem(rng, lam=10.0)
        M = rng.normal(size=(4, 3))
        assert data_log_density(prob, M) == pytest.approx(-10.0 * empirical_risk(prob, M),
                                                          rel=1e-15)

    def test_permutation_invariant(self, rng):
        prob = random_problem(rng)
        M = rng.normal(size=(4, 3))
        perm = rng.permutation(prob.n)
        o = prob.obs
        shuffled = RrrProblem(prob.X, ObservationSet(o.rows[perm], o.cols[perm],
                                                     o.values[perm]), prob.p, prob.lam,
                              prob.tau, prob.C)
        assert empirical_risk(shuffled, M) == pytest.approx(empirical_risk(prob, M),
                                                            rel=1e-13)

    def test_shape_checked(self, rng):
        prob = random_problem(rng)
        with pytest.raises(InvalidInputError):
            empirical_risk(prob, np.zeros((3, 4)))


class TestDataGrad:
    def test_scalar_chain_rule(self):
        prob = RrrProblem(np.array([[2.0]]), ObservationSet([0], [0], [3.0]), 1,
                          lam=1.5, C=100.0)
        M = np.array([[0.4]])
        assert data_grad(prob, M)[0, 0] == pytest.approx(2 * 1.5 * 2.0 * (3.0 - 0.8))

    def test_outside_box_is_zero(self, rng):
        prob = random_problem(rng, C=0.01)
        M = 100 * np.ones((4, 3))
        XM = prob.X @ M
        assert np.all(np.abs(XM) >= 0.01)
        np.testing.assert_array_equal(data_grad(prob, M), 0.0)

    def test_boundary_tie_contributes_nothing(self):
        prob = RrrProblem(np.ones((1, 1)), ObservationSet([0], [0], [5.0]), 1,
                          lam=1.0, C=2.0)
        assert data_grad(prob, np.array([[2.0]]))[0, 0] == 0.0

    def test_finite_differences(self, rng):
        prob = random_problem(rng, 6, 4, 3, C=2.5)
        checked = 0
        while checked < 5:
            M = rng.normal(scale=0.5, size=(4, 3))
            if np.any(np.abs(np.abs(prob.X @ M) - prob.C) < 1e-3):
                continue
            G = data_grad(prob, M)
            num = np.zeros_like(M)
            for u, v in itertools.product(range(4), range(3)):
                E = np.zeros_like(M)
                E[u, v] = 1e-6
                num[u, v] = (data_log_density(prob, M + E)
                             - data_log_density(prob, M - E)) / 2e-6
            assert np.linalg.norm(G - num) <= 1e-4 * np.linalg.norm(num)
            checked += 1

    def test_data_terms_agree(self, rng):
        prob = random_problem(rng, C=1.5)
        M = rng.normal(size=(4, 3))
        logd, grad = data_terms(prob, M)
        assert logd == pytest.approx(data_log_density(prob, M), rel=1e-14)
        np.testing.assert_allclose(grad, data_grad(prob, M), rtol=1e-14, atol=1e-14)

    def test_ascent_direction(self, rng):
        prob = random_problem(rng, C=1e3)
        M = rng.normal(size=(4, 3))
        G = data_grad(prob, M)
        assert empirical_risk(prob, M + 1e-6 * G) < empirical_risk(prob, M)


class TestWeightedNorm:
    def test_simple_cases(self):
        assert weighted_frobenius_sq(np.zeros((2, 2)), np.full((2, 2), 0.25)) == 0
        assert weighted_frobenius_sq(np.ones((2, 2)), np.full((2, 2), 0.25)) == 1

    def test_loop_oracle(self, rng):
        A = rng.normal(size=(4, 5))
        W = rng.random((4, 5))
        W /= W.sum()
        loop = sum(W[i, j] * A[i, j] ** 2 for i in range(4) for j in range(5))
        assert weighted_frobenius_sq(A, W) == pytest.approx(loop, abs=1e-12)

    def test_uniform_weights(self, rng):
        A = rng.normal(size=(3, 4))
        assert weighted_frobenius_sq(A, np.full((3, 4), 1 / 12)) == pytest.approx(
            np.linalg.norm(A) ** 2 / 12)

    def test_bad_weights(self):
        with pytest.raises(InvalidInputError):
            weighted_frobenius_sq(np.ones((1, 2)), np.array([[1.5, -0.5]]))
        with pytest.raises(InvalidInputError):
            weighted_frobenius_sq(np.ones((1, 2)), np.array([[0.2, 0.2]]))


def test_center_columns():
    obs = ObservationSet([0, 1, 0], [0, 0, 1], [1.0, 3.0, 5.0])
    centered, offsets = center_columns(obs, 3)
    np.testing.assert_array_equal(offsets, [2.0, 5.0, 0.0])
    np.testing.assert_array_equal(centered.values, [-1.0, 1.0, 0.0])


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_risk_nonnegative(seed):
    g = np.random.default_rng(seed)
    prob = random_problem(g, C=float(g.uniform(0.1, 5)))
    assert empirical_risk(prob, g.normal(scale=3, size=(4, 3))) >= 0
