import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmmlab.convergence import chain_rule_gap
from hmmlab.errors import InputError, ModelError
from hmmlab.experiments import chain_rule_instance
from hmmlab.models import eval_h, eval_h_grad_hess, laplace_gaussian, linear_gaussian, power_family, sample_trajectory
from hmmlab.newton import (
    GAUSS_NODES,
    GAUSS_WEIGHTS,
    MapPaths,
    SolverConfig,
    influence_jacobian,
    observation_anchor,
    prefix_series,
    solve_constrained,
    solve_map,
    tail_sensitivity,
)


def rts_smoother(y, a, b, q, r, p0):
    """Kalman filter + Rauch-Tung-Striebel smoother means for the linear Gaussian chain."""
    n = len(y)
    mf, pf = np.empty(n), np.empty(n)
    mp, pp = 0.0, p0
    for t in range(n):
        if t:
            mp, pp = a * mf[t - 1], a * a * pf[t - 1] + q
        k = pp * b / (b * b * pp + r)
        mf[t] = mp + k * (y[t] - b * mp)
        pf[t] = (1 - k * b) * pp
    ms = mf.copy()
    for t in range(n - 2, -1, -1):
        g = pf[t] * a / (a * a * pf[t] + q)
        ms[t] = mf[t] + g * (ms[t + 1] - a * mf[t])
    return ms


class TestSolverConfig:
    @pytest.mark.parametrize("kw", [{"grad_tol": 0}, {"max_iters": 0}, {"line_search_shrink": 1.0},
                                    {"fd_step": -1.0}])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(InputError):
            SolverConfig(**kw)


class TestSolveMap:
    def test_single_observation(self):
        sol = solve_map(linear_gaussian(a=1.0), [2.0])
        assert sol.path[0] == pytest.approx(1.0, abs=1e-12)
        assert sol.converged

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_kalman_smoother(self, seed):
        r = np.random.default_rng(seed)
        p = dict(a=r.uniform(-1.5, 1.5), b=r.uniform(0.5, 2), q=r.uniform(0.5, 2), r=r.uniform(0.5, 2),
                 p0=r.uniform(0.5, 2))
        model = linear_gaussian(**p)
        y = sample_trajectory(model, 200, seed).observations
        sol = solve_map(model, y)
        np.testing.assert_allclose(sol.path, rts_smoother(y, **p), rtol=1e-8, atol=1e-9)

    @pytest.mark.parametrize("factory", [linear_gaussian, lambda: power_family(a=0.8, delta=0.5),
                                         lambda: power_family(a=-0.9, b=0.7, delta=1.0, c=1.0, delta_prime=0.5)])
    def test_descent_and_stationarity(self, factory):
        model = factory()
        y = sample_trajectory(model, 300, 4).observations
        config = SolverConfig()
        sol = solve_map(model, y, config)
        assert sol.converged and sol.grad_inf_norm <= config.grad_tol
        assert np.all(np.diff(sol.history) <= 1e-12 * (1 + abs(sol.history[0])))
        g, _ = eval_h_grad_hess(model, sol.path, y)
        assert np.max(np.abs(g)) <= config.grad_tol

    def test_random_probes_do_not_improve(self, rng):
        model = power_family(a=0.5, delta=0.5)
        y = sample_trajectory(model, 40, 8).observations
        sol = solve_map(model, y)
        for _ in range(100):
            z = sol.path + rng.normal(scale=10 ** rng.uniform(-4, 0), size=sol.path.shape)
            assert eval_h(model, z, y) >= sol.objective - 1e-12 * (1 + abs(sol.objective))

    def test_newton_step_residual(self):
        model = power_family(a=0.7, delta=0.5)
        y = sample_trajectory(model, 50, 2).observations
        sol = solve_map(model, y)
        g, H = eval_h_grad_hess(model, sol.path, y)
        step = np.linalg.solve(H.dense(), -g)
        assert np.max(np.abs(step)) <= 1e-9

    def test_iteration_cap_reports_unconverged(self):
        model = power_family(a=0.9, delta=1.0)
        y = sample_trajectory(model, 30, 1).observations * 50
        sol = solve_map(model, y, SolverConfig(max_iters=1), x0=np.zeros(30))
        assert not sol.converged and sol.iterations == 1

    def test_laplace_uses_exact_solver(self):
        sol = solve_map(laplace_gaussian(), [0.0, 1.5, 3.0])
        assert sol.iterations == 0 and sol.converged
        assert sol.grad_inf_norm <= 1e-12

    def test_empty_observations(self):
        with pytest.raises(InputError):
            solve_map(linear_gaussian(), [])

    def test_observation_anchor_inverts_obs_cost(self):
        model = power_family(b=1.3, c=1.0, delta_prime=1.0)
        y = np.linspace(-4, 4, 17)
        x = observation_anchor(model, y)
        np.testing.assert_allclose(model.obs_cost(x, y).d1, 0, atol=1e-9)


class TestConstrained:
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_single_step_closed_form(self, y, u):
        sol = solve_constrained(linear_gaussian(a=1.0), [y], u)
        assert sol.path[0] == pytest.approx((y + u) / 3, abs=1e-10)

    def test_influence_single_step(self):
        jac = influence_jacobian(linear_gaussian(a=1.0), [0.7], 0.2)
        assert jac[0] == pytest.approx(1 / 3, abs=1e-8)

    def test_rejects_non_smooth(self):
        with pytest.raises(ModelError):
            solve_constrained(laplace_gaussian(), [0.0], 1.0)

    @settings(max_examples=40)
    @given(st.integers(1, 25), st.integers(0, 2**32 - 1))
    def test_ift_matches_dense_oracle(self, n, seed):
        r = np.random.default_rng(seed)
        model = power_family(a=float(r.uniform(-1, 1)), b=float(r.uniform(0.5, 1.5)), delta=0.5)
        y = sample_trajectory(model, n, seed).observations
        u = float(r.normal(scale=2))
        sol, jac = tail_sensitivity(model, y, u)
        _, H = eval_h_grad_hess(model, sol.path, y, tail=u)
        rhs = np.zeros(n)
        rhs[-1] = -model.trans_cost(sol.path[-1:], np.array([u])).duv[0]
        np.testing.assert_allclose(jac, np.linalg.solve(H.dense(), rhs), rtol=1e-9, atol=1e-300)

    def test_ift_agrees_with_finite_differences(self):
        model = power_family(a=0.6, delta=0.5)
        y = sample_trajectory(model, 12, 3).observations
        _, jac = tail_sensitivity(model, y, 0.4)
        fd = influence_jacobian(model, y, 0.4)
        np.testing.assert_allclose(fd, jac, rtol=1e-5, atol=1e-8)


class TestQuadrature:
    def test_nodes_on_unit_interval(self):
        assert np.all((GAUSS_NODES > 0) & (GAUSS_NODES < 1))
        assert GAUSS_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)

    def test_exact_for_degree_nine(self):
        for k in range(10):
            assert float(GAUSS_WEIGHTS @ GAUSS_NODES ** k) == pytest.approx(1 / (k + 1), rel=1e-13)


class TestPrefixSeries:
    def test_terminal_horizon_only(self):
        model = linear_gaussian()
        y = sample_trajectory(model, 5, 0).observations
        ps = prefix_series(model, y, 5)
        assert ps.horizons() == [5]
        np.testing.assert_allclose(ps.rows[5], solve_map(model, y).path, atol=1e-12)
        assert ps.increments == {}

    def test_rows_match_cold_solves(self):
        model = power_family(a=0.8, delta=0.5)
        y = sample_trajectory(model, 25, 6).observations
        ps = prefix_series(model, y, 3)
        for n in ps.horizons():
            np.testing.assert_allclose(ps.rows[n], solve_map(model, y[:n]).path[:3], atol=1e-9)

    def test_increments_match_differences(self):
        model = linear_gaussian(a=0.9)
        y = sample_trajectory(model, 30, 7).observations
        ps = prefix_series(model, y, 2)
        for n, inc in ps.increments.items():
            np.testing.assert_allclose(inc, ps.rows[n + 1] - ps.rows[n], atol=1e-9)

    def test_increments_resolve_below_rounding(self):
        model = linear_gaussian(a=0.5)
        y = sample_trajectory(model, 80, 1).observations
        ps = prefix_series(model, y, 1)
        tail = abs(ps.increments[70][0])
        assert 0 < tail < 1e-20

    def test_laplace_prefix_freezes(self):
        # 0-based: y[1] lies 1.5 above y[0]; the doubled objective freezes x_1 once y[1] - y[0] > 1
        y = np.array([0.0, 1.5, 3.0])
        ps = prefix_series(laplace_gaussian(), y, 1)
        assert ps.increments is None
        assert ps.rows[2][0] == ps.rows[3][0]

    @pytest.mark.parametrize("m,N", [(0, 5), (6, 5)])
    def test_bad_prefix(self, m, N):
        with pytest.raises(InputError):
            prefix_series(linear_gaussian(), np.zeros(N), m)

    def test_map_paths_range(self):
        paths = MapPaths(linear_gaussian(), np.zeros(3))
        with pytest.raises(InputError):
            paths.solution(4)


class TestChainRule:
    @pytest.mark.parametrize("seed", range(25))
    def test_chain_rule_gap_small(self, seed):
        model, y, m, n = chain_rule_instance(seed)
        config = SolverConfig()
        assert chain_rule_gap(model, y, m, n, config) <= 10 * config.grad_tol
