import numpy as np
import pytest
from scipy.integrate import solve_ivp

from wkbtorus.errors import ParticleOutsideDomain
from wkbtorus.grid import TWO_PI, make_grid, torus_distance
from wkbtorus.hamiltonian import (
    Potential,
    critical_value,
    flow,
    flow_graph_map,
    ham_eval,
    lagrangian_eval,
    potential_argmax,
    trajectory,
    verlet_step,
)
from wkbtorus.weak_kam import flat_solution


class TestPotential:
    def test_cosine_values(self):
        V = Potential.cosine()
        x = np.linspace(0, 6, 7)
        np.testing.assert_allclose(V(x), np.cos(x), atol=1e-15)
        np.testing.assert_allclose(V.gradient(x)[:, 0], -np.sin(x), atol=1e-15)
        np.testing.assert_allclose(V.hessian(x)[:, 0, 0], -np.cos(x), atol=1e-15)

    def test_derivatives_agree(self, rng):
        V = Potential.cosine(dim=2)
        x = rng.uniform(0, TWO_PI, (20, 2))
        g, h = V.derivatives(x)
        np.testing.assert_allclose(g, V.gradient(x), atol=1e-14)
        np.testing.assert_allclose(h, V.hessian(x), atol=1e-14)

    def test_two_mode(self):
        V = Potential.two_mode((1.0, 0.3), (0.0, 0.5))
        x = np.array([0.4, 2.0])
        np.testing.assert_allclose(V(x), np.cos(x) + 0.3 * np.cos(2 * x + 0.5), atol=1e-15)

    def test_non_integer_wavevector(self):
        with pytest.raises(ValueError):
            Potential(1, [[0.5]], [1.0])

    def test_from_field_is_interpolant(self):
        g = make_grid(1, 32)
        V = Potential.from_field(Potential.two_mode().sample(g))
        x = np.array([0.123, 4.5])
        np.testing.assert_allclose(V(x), Potential.two_mode()(x), atol=1e-13)


class TestCriticalValue:
    @pytest.mark.parametrize("V,expected", [
        (Potential.cosine(), 1.0),
        (Potential.zero(), 0.0),
        (Potential.cosine(dim=2), 1.5),
    ])
    def test_values(self, V, expected):
        assert critical_value(V) == pytest.approx(expected, abs=1e-12)

    def test_shifted_two_mode(self):
        V = Potential.two_mode((1.0, 0.3), (0.7, 0.0))
        xs = np.linspace(0, TWO_PI, 200001)
        assert critical_value(V) == pytest.approx(V(xs).max(), abs=1e-9)
        assert V(potential_argmax(V))[0] == pytest.approx(critical_value(V), abs=1e-12)


def test_pointwise_hamiltonian_and_lagrangian():
    V = Potential.cosine()
    assert ham_eval(0.0, 0.0, V)[0] == pytest.approx(1.0)
    assert lagrangian_eval(np.pi, 2.0, V)[0] == pytest.approx(3.0)


class TestFlow:
    def test_free_motion_exact(self, rng):
        V = Potential.zero()
        x = rng.uniform(0, TWO_PI, 10)
        p = rng.normal(size=10)
        xt, pt = flow(x, p, 0.8, V, m=2.0)
        np.testing.assert_allclose(xt[:, 0], np.mod(x + p * 0.8 / 2.0, TWO_PI), atol=1e-12)
        np.testing.assert_array_equal(pt[:, 0], p)

    def test_equilibrium_fixed(self):
        V = Potential.cosine()
        xt, pt = flow(0.0, 0.0, 1.0, V)
        assert xt[0, 0] == 0.0 and pt[0, 0] == 0.0
        V2 = Potential.cosine(dim=2)
        xt, pt = flow([0.0, 0.0], [0.0, 0.0], 1.0, V2)
        np.testing.assert_array_equal(pt, 0.0)
        # sin(pi) is not zero in floating point, so the saddle is fixed up to rounding
        xt, pt = flow([np.pi, 0.0], [0.0, 0.0], 1.0, V2)
        assert np.max(np.abs(pt)) < 1e-13

    def test_against_rk45(self, rng):
        V = Potential.cosine(dim=2)
        x0 = rng.uniform(0, TWO_PI, 2)
        p0 = rng.normal(size=2)

        def rhs(_, z):
            return np.concatenate([z[2:], -V.gradient(z[:2])[0]])

        ref = solve_ivp(rhs, (0, 1), np.concatenate([x0, p0]), rtol=1e-12, atol=1e-12).y[:, -1]
        xt, pt = flow(x0, p0, 1.0, V, step=1e-3, reduce=False)
        assert np.max(np.abs(xt[0] - ref[:2])) < 1e-6
        assert np.max(np.abs(pt[0] - ref[2:])) < 1e-6

    def test_second_order(self):
        V = Potential.cosine()
        ref = flow(0.3, 1.2, 1.0, V, step=1e-5, reduce=False)[0][0, 0]
        e1 = abs(flow(0.3, 1.2, 1.0, V, step=0.02, reduce=False)[0][0, 0] - ref)
        e2 = abs(flow(0.3, 1.2, 1.0, V, step=0.01, reduce=False)[0][0, 0] - ref)
        assert 3.5 < e1 / e2 < 4.5

    def test_energy_on_random_points(self, rng):
        V = Potential.cosine()
        x = rng.uniform(0, TWO_PI, 128)
        p = rng.uniform(-2, 2, 128)
        _, X, P = trajectory(x, p, 1.0, V, step=1e-3)
        H = np.array([ham_eval(np.mod(X[i], TWO_PI), P[i], V) for i in range(len(X))])
        assert np.max(np.abs(H - H[0])) < 1e-6

    def test_reversible(self, rng):
        V = Potential.cosine(dim=2)
        x = rng.uniform(0, TWO_PI, (5, 2))
        p = rng.normal(size=(5, 2))
        x1, p1 = verlet_step(x, p, 0.01, V)
        x2, p2 = verlet_step(x1, p1, -0.01, V)
        assert np.max(np.abs(x2 - x)) < 1e-12 and np.max(np.abs(p2 - p)) < 1e-12

    def test_zero_time_identity(self):
        xt, pt = flow(1.0, 2.0, 0.0, Potential.cosine())
        assert xt[0, 0] == 1.0 and pt[0, 0] == 2.0


class TestGraphMap:
    def test_identity_at_zero_time(self, S_cos):
        x = np.array([2.0, 3.0, 4.0])
        np.testing.assert_allclose(flow_graph_map(x, S_cos, 0.0, Potential.cosine())[:, 0], x)

    def test_flat_solution_rest(self):
        S = flat_solution(make_grid(1, 64))
        x = np.array([0.5, 2.5])
        np.testing.assert_allclose(flow_graph_map(x, S, 1.0, Potential.zero())[:, 0], x)

    def test_outside_domain(self, S_cos):
        with pytest.raises(ParticleOutsideDomain) as info:
            flow_graph_map([2.0, np.pi], S_cos, 0.5, Potential.cosine())
        assert info.value.indices == (1,)

    def test_graph_invariance(self, S_cos, cosine):
        x = np.linspace(2.0, 4.2, 50)
        p0 = S_cos.gradient_at(x)
        for t in (0.25, 0.5, 1.0):
            xt, pt = flow(x, p0, t, cosine)
            assert np.max(np.abs(pt - S_cos.gradient_at(xt))) < 1e-2
            # the graph is forward invariant and the flow moves towards the maximum of V
            assert np.all(torus_distance(xt, np.zeros_like(xt)) <= torus_distance(x[:, None], 0 * xt) + 1e-12)
