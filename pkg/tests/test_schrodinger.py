import numpy as np
import pytest

from wkbtorus.errors import EmptySupport, ResolutionError
from wkbtorus.grid import TWO_PI, make_grid
from wkbtorus.hamiltonian import Potential
from wkbtorus.measures import GridMeasure, w1_circle
from wkbtorus.schrodinger import (
    WaveFunction,
    WkbConfig,
    build_wkb,
    energy,
    hbar_gradient_norm,
    propagate,
    propagate_samples,
    smooth_step,
    strang_step,
    trimming_window,
    wkb_initial,
)


def plane_wave(grid, k, hbar):
    return WaveFunction.normalized(grid, np.exp(1j * k * grid.axis), hbar)


def bump(grid, center, width):
    d = np.abs((grid.axis - center + np.pi) % TWO_PI - np.pi) / width
    return GridMeasure.normalized(grid, np.where(d < 1, np.exp(-1 / np.maximum(1 - d * d, 1e-300)), 0))


class TestWaveFunction:
    def test_norm_enforced(self):
        g = make_grid(1, 16)
        with pytest.raises(ValueError):
            WaveFunction(g, np.ones(16), 0.1)
        assert plane_wave(g, 2, 0.1).norm() == pytest.approx(1.0)

    def test_positive_hbar(self):
        g = make_grid(1, 16)
        with pytest.raises(ValueError):
            WaveFunction.normalized(g, np.ones(16), 0.0)


class TestPropagation:
    def test_free_plane_wave_exact(self):
        g = make_grid(1, 64)
        hbar, k, t = 0.1, 5, 0.73
        psi = plane_wave(g, k, hbar)
        out = propagate(psi, t, t / 7, Potential.zero())
        ref = psi.values * np.exp(-0.5j * hbar * k * k * t)
        assert np.max(np.abs(out.values - ref)) < 1e-12

    def test_free_multiplier_2d(self):
        g = make_grid(2, 16)
        hbar, t = 0.2, 0.5
        X, Y = g.mesh()
        psi = WaveFunction.normalized(g, np.exp(1j * (2 * X - 3 * Y)) + np.exp(1j * Y), hbar)
        out = propagate(psi, t, 0.05, Potential.zero(dim=2))
        ref = (np.exp(1j * (2 * X - 3 * Y)) * np.exp(-0.5j * hbar * 13 * t)
               + np.exp(1j * Y) * np.exp(-0.5j * hbar * t))
        ref /= np.sqrt(np.sum(np.abs(ref) ** 2) * g.cell_volume)
        assert np.max(np.abs(out.values - ref)) < 1e-12

    def test_unitary(self, cosine):
        g = make_grid(1, 128)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis) + 1j * np.sin(2 * g.axis)), 0.05)
        out = propagate(psi, 1.0, 1e-2, cosine)
        assert out.norm() == pytest.approx(1.0, abs=1e-12)

    def test_second_order(self, cosine):
        g = make_grid(1, 128)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis)), 0.1)
        ref = propagate(psi, 0.5, 1e-4, cosine).values
        errs = [np.max(np.abs(propagate(psi, 0.5, dt, cosine).values - ref))
                for dt in (0.02, 0.01)]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_samples_match_propagate(self, cosine):
        g = make_grid(1, 64)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis)), 0.1)
        outs = propagate_samples(psi, [0.0, 0.1, 0.3], 0.01, cosine)
        assert np.array_equal(outs[0].values, psi.values)
        assert np.allclose(outs[2].values, propagate(psi, 0.3, 0.01, cosine).values, atol=1e-13)

    def test_bad_time(self, cosine):
        g = make_grid(1, 16)
        psi = plane_wave(g, 1, 0.1)
        with pytest.raises(ValueError):
            propagate(psi, 0.105, 0.01, cosine)
        with pytest.raises(ValueError):
            strang_step(psi, -0.1, cosine)


class TestEnergy:
    def test_plane_wave(self):
        g = make_grid(1, 32)
        psi = plane_wave(g, 3, 0.2)
        assert energy(psi, Potential.zero()) == pytest.approx(0.5 * 0.04 * 9, abs=1e-14)

    def test_constant_in_cosine(self, cosine):
        g = make_grid(1, 32)
        psi = WaveFunction.normalized(g, np.ones(32), 0.2)
        assert energy(psi, cosine) == pytest.approx(0.0, abs=1e-14)

    def test_conserved(self, cosine):
        g = make_grid(1, 256)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis) + 1j * np.sin(g.axis) / 0.05), 0.05)
        e0 = energy(psi, cosine)
        out = propagate(psi, 1.0, 1e-3, cosine)
        assert abs(energy(out, cosine) - e0) < 1e-5


class TestWkb:
    def test_smooth_step(self):
        assert smooth_step(-1.0) == 0.0 and smooth_step(2.0) == 1.0
        assert smooth_step(0.5) == pytest.approx(0.5)
        u = np.linspace(0, 1, 101)
        assert np.all(np.diff(smooth_step(u)) >= 0)

    def test_modulus_and_phase(self, S_cos_coarse):
        g = S_cos_coarse.grid
        sig = bump(g, 2.0, 0.6)
        cfg = WkbConfig(hbar=0.1)
        st = build_wkb(sig, S_cos_coarse, cfg)
        assert st.removed_mass == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(np.abs(st.psi.values) ** 2, sig.density, atol=1e-12)
        on = sig.density > 1e-8
        ph = np.angle(st.psi.values[on] * np.exp(-1j * S_cos_coarse.values[on] / cfg.hbar))
        assert np.max(np.abs(ph)) < 1e-9

    def test_trimming_near_cut_locus(self, S_cos_coarse):
        g = S_cos_coarse.grid
        st = build_wkb(GridMeasure.uniform(g), S_cos_coarse, WkbConfig(hbar=0.1))
        # the window vanishes at the cut locus pi and equals one far away
        assert st.window[g.n // 2] == 0.0
        assert st.window[0] == 1.0
        assert 0 < st.removed_mass < 0.1
        assert st.trim_w1 == pytest.approx(w1_circle(GridMeasure.uniform(g), st.trimmed))

    def test_cross_grid_window(self, S_cos_coarse):
        fine = make_grid(1, 1024)
        w = trimming_window(fine, S_cos_coarse, WkbConfig(hbar=0.1))
        assert w[512] == 0.0 and w[0] == 1.0

    def test_empty_support(self, S_cos_coarse):
        sig = bump(S_cos_coarse.grid, np.pi, 0.05)
        with pytest.raises(EmptySupport):
            wkb_initial(sig, S_cos_coarse, WkbConfig(hbar=0.05))

    def test_under_resolved(self, S_cos_coarse):
        with pytest.raises(ResolutionError):
            wkb_initial(bump(S_cos_coarse.grid, 1.0, 0.5), S_cos_coarse, WkbConfig(hbar=1e-3))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            WkbConfig(hbar=0.1, mask_margin=0)

    def test_gradient_norm_scales_with_hbar(self):
        g = make_grid(1, 64)
        a = 2 + np.cos(g.axis)
        # ||d/dx (2 + cos)||_2 = sqrt(pi)
        assert hbar_gradient_norm(a, g, 0.1) == pytest.approx(0.1 * np.sqrt(np.pi), rel=1e-12)


class TestMoreExamples:
    def test_flat_wkb(self):
        from wkbtorus.weak_kam import solve_weak_kam_plus

        g = make_grid(1, 64)
        S = solve_weak_kam_plus(Potential.zero(), grid=g)
        psi = wkb_initial(GridMeasure.uniform(g), S, WkbConfig(hbar=0.1))
        assert np.allclose(psi.values, (TWO_PI) ** -0.5, atol=1e-14)

    def test_amplitude_gradient_linear_in_hbar(self):
        from wkbtorus.pipeline import bump_density

        g = make_grid(1, 2048)
        from wkbtorus.weak_kam import solve_weak_kam_plus

        S = solve_weak_kam_plus(Potential.cosine(), grid=make_grid(1, 1024))
        sig = bump_density(g, [np.pi], 0.5)
        vals = [hbar_gradient_norm(wkb_initial(sig, S, WkbConfig(hbar=2.0**-k)), g, 2.0**-k)
                for k in range(3, 8)]
        assert np.allclose(np.array(vals[:-1]) / np.array(vals[1:]), 2.0, rtol=1e-12)

    def test_long_run_norm(self, cosine):
        g = make_grid(1, 64)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis)), 0.1)
        assert propagate(psi, 10.0, 1e-3, cosine).norm() == pytest.approx(1.0, abs=1e-12)

    def test_group_property(self, cosine):
        g = make_grid(1, 128)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis) + 1j * np.sin(g.axis)), 0.05)
        a = propagate(psi, 0.5, 0.01, cosine)
        b = propagate(propagate(psi, 0.2, 0.01, cosine), 0.3, 0.01, cosine)
        assert np.max(np.abs(a.values - b.values)) <= 1e-12
        assert np.array_equal(propagate(psi, 0.0, 0.01, cosine).values, psi.values)

    def test_order_against_quarter_step(self, cosine):
        g = make_grid(1, 128)
        psi = WaveFunction.normalized(g, np.exp(np.cos(g.axis)), 0.1)
        dt = 0.02
        ref = propagate(psi, 0.1, dt / 4, cosine).values
        e1 = np.max(np.abs(propagate(psi, 0.1, dt, cosine).values - ref))
        e2 = np.max(np.abs(propagate(psi, 0.1, dt / 2, cosine).values - ref))
        # Richardson with a dt/4 reference: (1 - 1/16) / (1/4 - 1/16) = 5
        assert e1 / e2 == pytest.approx(5.0, rel=0.05)
