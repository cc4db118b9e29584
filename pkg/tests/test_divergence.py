import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmmlab.divergence import (
    EPS_MAX,
    NORMALIZER,
    DivergenceModel,
    brute_force_v,
    closed_form_map,
    detailed_balance_exact,
    endpoint,
    endpoint_float,
    interval_index,
    interval_indices,
    length,
    level_log_score,
    path_log_score,
    random_competitors,
    sample,
    stationary_dist,
    stationary_weight,
    tail_mass,
    track_jstar,
    truncation_point,
)
from hmmlab.errors import InputError, SizeError
from hmmlab.rng import make_rng

MODEL = DivergenceModel(eps=0.1)


class TestIntervals:
    @pytest.mark.parametrize("y, i", [(0.5, 1), (0.95, 2), (0.999, 4), (0.0, 1)])
    def test_examples(self, y, i):
        assert interval_index(y) == i

    def test_endpoints_as_partial_sums(self):
        for i in range(1, 40):
            assert endpoint(i) == 8 * sum(Fraction(1, 9 ** j) for j in range(1, i + 1))
            assert endpoint(i) - endpoint(i - 1) == length(i)
        assert endpoint(3) == Fraction(728, 729)

    def test_endpoints_increase_to_one(self):
        a = [endpoint(i) for i in range(60)]
        assert all(x < y < 1 for x, y in zip(a, a[1:]))
        assert 1 - a[-1] < Fraction(1, 10 ** 50)

    def test_left_endpoint_belongs_to_interval(self):
        for i in range(1, 17):
            assert interval_index(endpoint_float(i - 1)) == i
            assert Fraction(endpoint_float(i - 1)) >= endpoint(i - 1)

    def test_exact_near_boundaries(self):
        # a_i crowd together near 1; the label must follow exact comparison
        for i in range(1, 17):
            f = endpoint_float(i)
            below = math.nextafter(f, 0.0)
            exact = endpoint(i)
            assert interval_index(below) == (i if Fraction(below) < exact else i + 1)
            assert interval_index(f) == i + 1

    @given(st.floats(0.0, 1.0, exclude_max=True))
    def test_vectorized_matches_scalar(self, y):
        assert interval_indices(np.array([y]))[0] == interval_index(y)
        i = interval_index(y)
        assert endpoint(i - 1) <= Fraction(y) < endpoint(i)

    def test_vectorized_dense_grid(self):
        y = np.concatenate([np.linspace(0, 1, 10001)[:-1], [endpoint_float(i) for i in range(16)],
                            [math.nextafter(endpoint_float(i), 0.0) for i in range(1, 16)]])
        np.testing.assert_array_equal(interval_indices(y), [interval_index(v) for v in y])

    @pytest.mark.parametrize("y", [-0.1, 1.0, 1.5, float("nan")])
    def test_outside_unit_interval(self, y):
        with pytest.raises(InputError):
            interval_index(y)
        with pytest.raises(InputError):
            interval_indices([0.2, y])


class TestStationaryLaw:
    def test_ratio_of_first_two(self):
        assert stationary_weight(2) / stationary_weight(1) == Fraction(13, 9)
        law = stationary_dist(10)
        assert law.probs[1] / law.probs[0] == pytest.approx(13 / 9, rel=1e-15)

    def test_formula(self):
        assert stationary_weight(1) == Fraction(1, 5) * (1 + Fraction(1, 2) ** 2)
        for j in range(2, 30):
            assert stationary_weight(j) == Fraction(1, j * j) * (1 + Fraction(j, j + 1) ** 2)

    def test_normalizer_against_series(self):
        # direct partial sum plus the integral tail estimate
        J = 10 ** 6
        j = np.arange(2, J + 1, dtype=np.float64)
        s = 0.25 + np.sum(1 / j ** 2 + 1 / (j + 1) ** 2) + 1 / (J + 0.5) + 1 / (J + 1.5)
        assert 1 / s == pytest.approx(NORMALIZER, rel=1e-12)

    def test_mode_and_monotone_decay(self):
        p = stationary_dist(200).probs
        assert p[1] > p[0]
        assert np.all(np.diff(p[1:]) < 0)

    @pytest.mark.parametrize("jmax", [2, 5, 50, 1000])
    def test_normalization_bracket(self, jmax):
        law = stationary_dist(jmax)
        s = law.probs.sum()
        assert s <= 1.0 + 1e-15
        assert s + law.tail_bound * law.C >= 1.0

    def test_tail_mass_matches_sum(self):
        law = stationary_dist(10 ** 6)
        for j in (1, 2, 10, 1000):
            assert float(tail_mass(j)) == pytest.approx(1 - law.probs[:j].sum(), abs=1e-11)

    def test_truncation_point(self):
        J = truncation_point()
        assert float(tail_mass(J)) < 1e-12 <= float(tail_mass(J - 1))
        assert MODEL.truncation == J

    def test_detailed_balance_exact(self):
        assert detailed_balance_exact(MODEL, 50) is None
        assert detailed_balance_exact(DivergenceModel(eps=0.05), 50) is None

    def test_balance_example(self):
        eps = Fraction(MODEL.eps)
        left = stationary_weight(2) * MODEL.transition_prob_exact(2, 3)
        right = stationary_weight(3) * MODEL.transition_prob_exact(3, 2)
        assert left == right == eps / 9

    def test_rejects_small_jmax(self):
        with pytest.raises(InputError):
            stationary_dist(1)


class TestModel:
    @pytest.mark.parametrize("eps", [0.0, EPS_MAX, 0.2, -0.1])
    def test_eps_range(self, eps):
        with pytest.raises(InputError):
            DivergenceModel(eps=eps)

    def test_eps_bound_value(self):
        assert EPS_MAX == pytest.approx(0.1192, abs=1e-4)

    def test_rows_sum_to_one(self):
        for i in range(1, 40):
            assert sum(MODEL.transition_prob_exact(i, j) for j in range(1, 45)) == 1
            assert sum(MODEL.transition_prob(i, j) for j in range(1, 45)) == pytest.approx(1.0, abs=1e-15)

    def test_log_matrix_matches_scalar(self):
        L = MODEL.log_transition_matrix(6)
        for i in range(1, 7):
            for j in range(1, 7):
                p = MODEL.transition_prob(i, j)
                if p:
                    assert L[i - 1, j - 1] == pytest.approx(math.log(p), rel=1e-15)
                else:
                    assert L[i - 1, j - 1] == -np.inf


class TestSampling:
    def test_deterministic(self):
        a, b = sample(MODEL, 100, 7), sample(MODEL, 100, 7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_lazy_fraction(self):
        _, v, _ = sample(MODEL, 100_000, 1)
        assert np.mean(v[1:] == v[:-1]) == pytest.approx(0.9, abs=0.01)

    def test_nearest_neighbour_moves_only(self):
        _, v, _ = sample(MODEL, 100_000, 2)
        assert np.all(np.abs(np.diff(v)) <= 1) and v.min() >= 1

    def test_support_of_observation(self):
        for seed in range(5):
            u, v, y = sample(MODEL, 50_000, seed)
            iu, iy = interval_indices(u), interval_indices(y)
            hit = iu <= v
            assert hit.any()
            np.testing.assert_array_equal(iy[hit], iu[hit])
            assert np.all((y >= 0) & (y < 1))

    def test_marginal_is_stationary(self):
        # V at step 10 of 1e5 independent chains
        law = stationary_dist(400)
        v = np.array([sample(MODEL, 10, s)[1][-1] for s in range(100_000)])
        counts = np.bincount(np.minimum(v, 401), minlength=402)[1:] / v.size
        ref = np.append(law.probs, 1 - law.probs.sum())
        assert 0.5 * np.abs(counts - ref).sum() <= 0.02

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            sample(MODEL, 0, 1)


class TestClosedForm:
    def test_example(self):
        u, v, j = closed_form_map(MODEL, [0.5, 0.95, 0.3])
        assert j == 2
        np.testing.assert_array_equal(v, [2, 2, 2])
        assert u[0] == 0.0 and u[2] == 0.0
        # smallest double not below 8/9
        assert Fraction(u[1]) >= Fraction(8, 9) > Fraction(math.nextafter(u[1], 0.0))

    def test_all_in_first_interval(self):
        _, v, j = closed_form_map(MODEL, [0.1, 0.5, 0.8])
        assert j == 1
        np.testing.assert_array_equal(v, [2, 2, 2])

    def test_track_examples(self):
        np.testing.assert_array_equal(track_jstar([0.5]), [1])
        np.testing.assert_array_equal(track_jstar([0.5, 0.95, 0.3]), [1, 2, 2])

    @given(st.lists(st.floats(0.0, 1.0, exclude_max=True), min_size=1, max_size=30),
           st.floats(0.0, 1.0, exclude_max=True))
    def test_jstar_monotone(self, ys, extra):
        track = track_jstar(ys)
        assert np.all(np.diff(track) >= 0)
        assert closed_form_map(MODEL, ys + [extra])[2] >= closed_form_map(MODEL, ys)[2]

    def test_observation_as_u_scores_equally(self):
        y = [0.5, 0.95, 0.999, 0.2]
        u, v, _ = closed_form_map(MODEL, y)
        assert path_log_score(MODEL, u, v, y) == path_log_score(MODEL, np.array(y), v, y)


class TestBruteForce:
    def test_two_observations(self):
        v, _ = brute_force_v(MODEL, [0.5, 0.95], vmax=5)
        np.testing.assert_array_equal(v, [2, 2])
        s22 = level_log_score(MODEL, [2, 2], [0.5, 0.95])
        s11 = level_log_score(MODEL, [1, 1], [0.5, 0.95])
        assert math.exp(s22 - s11) == pytest.approx((13 / 9) * (81 / 8), rel=1e-12)

    def test_single_observation(self):
        v, _ = brute_force_v(MODEL, [0.5])
        np.testing.assert_array_equal(v, [2])

    def test_agrees_with_closed_form(self):
        for seed in range(200):
            rng = make_rng(seed, 4)
            n = int(rng.integers(1, 9))
            # mix of ordinary draws and deep intervals so jstar varies
            y = np.where(rng.random(n) < 0.3, 1 - 9.0 ** -rng.uniform(1, 4, n), rng.random(n))
            v, score = brute_force_v(MODEL, y, limit=10 ** 7)
            _, vhat, _ = closed_form_map(MODEL, y)
            np.testing.assert_array_equal(v, vhat)
            assert score == pytest.approx(level_log_score(MODEL, vhat, y), abs=1e-12)

    def test_size_and_coverage_errors(self):
        with pytest.raises(SizeError):
            brute_force_v(MODEL, np.full(12, 0.5))
        with pytest.raises(InputError):
            brute_force_v(MODEL, [0.999], vmax=2)


class TestLikelihoodRatio:
    @pytest.mark.parametrize("seed", range(10))
    def test_competitors_never_win(self, seed):
        rng = make_rng(seed, 3)
        n = int(rng.integers(1, 11))
        _, _, y = sample(MODEL, n, seed)
        u_hat, v_hat, jstar = closed_form_map(MODEL, y)
        best = path_log_score(MODEL, u_hat, v_hat, y)
        assert best == pytest.approx(level_log_score(MODEL, v_hat, y), abs=1e-12)
        for u, v in random_competitors(MODEL, y, 100, rng):
            s = path_log_score(MODEL, u, v, y)
            if np.array_equal(v, v_hat):
                assert s <= best + 1e-12
            else:
                assert s < best


class TestDivergence:
    def test_median_jstar_grows(self):
        horizons = (100, 1000, 20_000)
        tracks = [track_jstar(sample(MODEL, horizons[-1], s)[2]) for s in range(50)]
        medians = [np.median([t[N - 1] for t in tracks]) for N in horizons]
        assert medians == sorted(medians)
        assert np.mean([t[-1] >= 3 for t in tracks]) >= 0.9
