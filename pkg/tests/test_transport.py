import numpy as np
import pytest

from wkbtorus.errors import Infeasible
from wkbtorus.grid import TWO_PI, make_grid, torus_distance
from wkbtorus.hamiltonian import Potential, flow
from wkbtorus.measures import ParticleMeasure
from wkbtorus.transport import (
    action_lower_bound,
    cost_matrix,
    displacement_check,
    flow_action,
    kantorovich,
    minimal_action_path,
    minimal_actions,
    trajectory_action,
)
from wkbtorus.weak_kam import solve_weak_kam_plus


class TestMinimalAction:
    def test_free_geodesic(self):
        for x, y in [(0.1, 0.4), (0.1, TWO_PI - 0.1), (0.0, 3.0)]:
            path = minimal_action_path(x, y, 0.7, M=32)
            d = float(torus_distance(np.array([x]), np.array([y])))
            assert path.action == pytest.approx(d * d / (2 * 0.7), abs=1e-12)
        assert minimal_action_path(0.1, TWO_PI - 0.1, 1.0, M=32).winding == (-1,)

    def test_free_mass(self):
        assert minimal_action_path(0.0, 1.0, 1.0, V=Potential.zero(), m=3.0).action == pytest.approx(1.5)

    def test_constant_path(self, cosine):
        x, t = 0.4, 0.05
        path = minimal_action_path(x, x, t, M=16, V=cosine)
        assert path.action == pytest.approx(-t * np.cos(x), abs=t**3)
        assert path.grad_norm <= 1e-8

    def test_richardson(self, cosine):
        a = [minimal_action_path(0.0, np.pi, 1.0, M, V=cosine).action for M in (64, 128)]
        assert abs(a[0] - a[1]) <= 1e-3

    def test_refinement_monotone(self, cosine):
        pairs = [(0.0, np.pi, 1.0), (0.3, 2.0, 1.0), (1.0, 1.2, 0.5), (5.0, 0.5, 1.0)]
        for x, y, t in pairs:
            a = [minimal_action_path(x, y, t, M, V=cosine).action for M in (16, 32, 64, 128)]
            assert np.all(np.diff(a) <= 1e-8)

    def test_trapezoid_rule_is_not_monotone(self, cosine):
        # documents why the segment rule is the default
        a = [minimal_action_path(0.0, np.pi, 1.0, M, V=cosine, rule="trapezoid").action
             for M in (32, 64)]
        assert a[1] > a[0] + 1e-8

    def test_rules_agree(self, cosine):
        a = minimal_action_path(0.3, 2.0, 1.0, 128, V=cosine).action
        b = minimal_action_path(0.3, 2.0, 1.0, 128, V=cosine, rule="trapezoid").action
        assert a == pytest.approx(b, abs=1e-4)

    def test_matches_characteristic(self, cosine):
        # the Verlet trajectory from (x, p) is a minimiser for short times
        x, p, t = 0.5, 0.8, 0.6
        y, _ = flow(np.array([x]), np.array([p]), t, cosine)
        c = minimal_action_path(x, float(y[0, 0]), t, 128, V=cosine).action
        assert c == pytest.approx(float(trajectory_action(x, p, t, cosine)[0]), abs=1e-4)

    def test_bad_inputs(self, cosine):
        with pytest.raises(ValueError):
            minimal_action_path(0.0, 1.0, 0.0, V=cosine)
        with pytest.raises(ValueError):
            minimal_action_path(0.0, 1.0, 1.0, M=8, V=cosine)
        with pytest.raises(ValueError):
            minimal_action_path(0.0, 1.0, 1.0, V=cosine, rule="simpson")

    def test_triangle(self, cosine):
        x, z = 0.2, 2.4
        direct = minimal_action_path(x, z, 1.0, 64, V=cosine).action
        ys = np.linspace(0, TWO_PI, 64, endpoint=False)
        a, _ = minimal_actions(np.full(64, x), ys, 0.5, 64, V=cosine)
        b, _ = minimal_actions(ys, np.full(64, z), 0.5, 64, V=cosine)
        assert direct <= np.min(a + b) + 1e-6

    def test_2d_free(self):
        V = Potential.zero(dim=2)
        path = minimal_action_path([0.1, 0.2], [0.4, 6.0], 1.0, 16, V=V)
        d2 = 0.3**2 + (TWO_PI - 5.8) ** 2
        assert path.action == pytest.approx(d2 / 2, abs=1e-12)
        assert path.winding == (0, -1)


class TestCostMatrix:
    def test_free_closed_form(self):
        X = np.linspace(0, TWO_PI, 7, endpoint=False)
        Y = X + 0.3
        C = cost_matrix(X, Y, 1.0, 16, V=Potential.zero())
        d = torus_distance(X[:, None, None], Y[None, :, None])
        assert np.allclose(C.values, d**2 / 2, atol=1e-12)

    def test_symmetry_and_bound(self, cosine):
        X = np.linspace(0, TWO_PI, 9, endpoint=False)
        C = cost_matrix(X, X, 1.0, 64, V=cosine)
        assert np.max(np.abs(C.values - C.values.T)) <= 1e-6
        assert C.values.min() >= action_lower_bound(cosine, 1.0) - 1e-6

    def test_size_limit(self):
        with pytest.raises(ValueError):
            cost_matrix(np.zeros(129), np.zeros(2), 1.0, V=Potential.zero())


class TestKantorovich:
    def test_identity(self):
        X = np.linspace(0, TWO_PI, 6, endpoint=False)
        C = cost_matrix(X, X, 1.0, 16, V=Potential.zero())
        mu = ParticleMeasure.uniform(X)
        cost, plan = kantorovich(mu, mu, C)
        assert cost == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(plan.weights, np.eye(6) / 6)

    def test_two_by_two(self, rng):
        C = rng.uniform(size=(2, 2))
        a = np.array([0.5, 0.5])
        # the plan is [[s, 1/2 - s], [1/2 - s, s]], linear in s on [0, 1/2]
        closed = min(0.5 * (C[0, 0] + C[1, 1]), 0.5 * (C[0, 1] + C[1, 0]))
        assert kantorovich(a, a, C)[0] == pytest.approx(closed, abs=1e-14)

    def test_beats_random_plans(self, rng):
        n = 8
        C = rng.uniform(size=(n, n))
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        opt, plan = kantorovich(a, b, C)
        assert np.allclose(plan.weights.sum(1), a, atol=1e-8)
        assert np.allclose(plan.weights.sum(0), b, atol=1e-8)
        for _ in range(100):
            P = rng.uniform(size=(n, n))
            for _ in range(200):
                P *= (a / P.sum(1))[:, None]
                P *= (b / P.sum(0))[None, :]
            assert opt <= np.sum(P * C) + 1e-12

    def test_sinkhorn_fallback(self, rng):
        n = 70
        C = rng.uniform(size=(n, n))
        a = np.full(n, 1 / n)
        exact, _ = kantorovich(a, a, C, exact_max=100)
        cost, plan = kantorovich(a, a, C, epsilon=1e-2)
        assert plan.method == "sinkhorn"
        assert exact - 1e-9 <= cost <= exact + plan.marginal_error + 1e-9

    def test_infeasible(self):
        with pytest.raises(Infeasible):
            kantorovich([0.5, 0.5], [1.0, 0.5], np.zeros((2, 2)))

    def test_deterministic(self, rng):
        C = rng.uniform(size=(10, 10))
        a = np.full(10, 0.1)
        p1 = kantorovich(a, a, C)[1].weights
        p2 = kantorovich(a, a, C)[1].weights
        assert np.array_equal(p1, p2)


class TestDisplacement:
    def test_flow_action_static(self):
        S = solve_weak_kam_plus(Potential.zero(), grid=make_grid(1, 64))
        assert np.all(flow_action([0.5, 2.0], S, 1.0, Potential.zero()) == 0)

    def test_flow_action_additive(self, S_cos, cosine):
        x = np.array([1.0, 2.0, 4.5])
        p = S_cos.gradient_at(x[:, None])
        whole = trajectory_action(x, p, 1.0, cosine)
        y, q = flow(x[:, None], p, 0.5, cosine)
        parts = trajectory_action(x, p, 0.5, cosine) + trajectory_action(y, q, 0.5, cosine)
        assert np.allclose(whole, parts, atol=1e-8)

    def test_flow_action_is_minimal(self, S_cos, cosine):
        x = np.array([1.0, 2.0, 4.5, 5.5])
        a = flow_action(x, S_cos, 1.0, cosine)
        y, _ = flow(x[:, None], S_cos.gradient_at(x[:, None]), 1.0, cosine)
        c, _ = minimal_actions(x, y, 1.0, 64, V=cosine)
        assert np.allclose(a, c, atol=1e-2)

    def test_static(self):
        S = solve_weak_kam_plus(Potential.zero(), grid=make_grid(1, 64))
        sig = ParticleMeasure.uniform(np.linspace(0, TWO_PI, 8, endpoint=False))
        rep = displacement_check(sig, S, 1.0, Potential.zero(), M=16)
        assert rep.flow_action == rep.graph_cost == rep.optimal_cost == 0.0

    def test_cosine_gaps(self, S_cos, cosine):
        x = np.linspace(0.4, TWO_PI - 0.4, 16)
        rep = displacement_check(ParticleMeasure.uniform(x), S_cos, 1.0, cosine)
        assert rep.gap_graph >= -1e-8
        assert abs(rep.rel_gap_flow) <= 0.02
        assert abs(rep.rel_gap_graph) <= 0.02
