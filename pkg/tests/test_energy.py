import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solveh_banded

from cholesteric1d.core import (
    JUMP_COST,
    TWO_PI,
    ComplexField,
    ModelParams,
    PolarField,
    jump_map_from_function,
    make_grid,
    to_cartesian,
    uniform_twist_field,
    uniform_twist_polar,
)
from cholesteric1d.energy import (
    EnergyBreakdown,
    energy_eps,
    energy_eps_polar,
    energy_gamma,
    energy_rescaled,
    energy_values,
    grad_energy_eps,
    grad_energy_eps_polar,
    grad_energy_rescaled,
    gradient_values,
    hessian_banded,
    polar_gradient_values,
    polar_hessian_banded,
    twist_integral,
)
from cholesteric1d.errors import InvalidParameterError

# frozen from scripts/oracles.py (closed-form cell sums in 40-digit arithmetic)
ORACLE_ZERO_TWIST_N2_EPS001_L1_N101 = 0.78946454127652086785
ORACLE_M1_N2_EPS005_L05_N2001 = 10.856596499194269954
ORACLE_RESCALED_W1_N101 = 4.9289199170150201041


def random_field(n, rng, alpha=0.0, wiggle=0.3):
    g = make_grid(n)
    theta = (TWO_PI * rng.integers(0, 3) + alpha) * g.x + wiggle * rng.normal(size=n)
    rho = 1.0 + wiggle * rng.normal(size=n)
    return ComplexField(g, np.column_stack([rho * np.cos(theta), rho * np.sin(theta)]), alpha)


def fd_gradient(fun, z, step=1e-6):
    out = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += step
        zm[idx] -= step
        out[idx] = (fun(zp) - fun(zm)) / (2 * step)
    return out


class TestCartesianEnergy:
    def test_zero_twist_state_frozen_oracle(self):
        params = ModelParams(0.01, 1.0, N=2)
        u = uniform_twist_field(2, params, make_grid(101))
        assert energy_eps(u, params).total == pytest.approx(ORACLE_ZERO_TWIST_N2_EPS001_L1_N101, rel=1e-12)

    def test_zero_twist_state_approaches_continuum(self):
        params = ModelParams(0.01, 1.0, N=2)
        u = uniform_twist_field(2, params, make_grid(3201))
        assert energy_eps(u, params).total == pytest.approx(2 * (math.pi * 2) ** 2 * 0.01, rel=1e-5)

    def test_constant_state_is_zero(self):
        params = ModelParams(0.3, 2.0)
        u = uniform_twist_field(0, params, make_grid(51))
        e = energy_eps(u, params)
        assert e.total == 0.0
        np.testing.assert_array_equal(grad_energy_eps(u, params), 0.0)

    def test_uniform_twist_off_target_frozen_oracle(self):
        params = ModelParams(0.05, 0.5, N=2)
        u = uniform_twist_field(1, params, make_grid(2001))
        e = energy_eps(u, params)
        assert e.total == pytest.approx(ORACLE_M1_N2_EPS005_L05_N2001, rel=1e-12)
        # continuum eps (2 pi)^2 / 2 + L/2 (2 pi)^2
        assert e.total == pytest.approx(0.05 * TWO_PI**2 / 2 + 0.25 * TWO_PI**2, rel=1e-5)

    def test_breakdown_sums(self):
        rng = np.random.default_rng(0)
        u = random_field(41, rng)
        e = energy_eps(u, ModelParams(0.1, 0.7, 1, 0.0))
        assert e.total == pytest.approx(e.gradient_term + e.potential_term + e.twist_term)
        assert EnergyBreakdown.from_dict(e.to_dict()) == e

    @pytest.mark.parametrize("n", [51, 101, 501])
    @pytest.mark.parametrize("seed", [0, 1])
    def test_gradient_matches_finite_differences(self, n, seed):
        rng = np.random.default_rng(seed)
        params = ModelParams(0.05, 0.8, 1, 0.6)
        u = random_field(n, rng, params.alpha)
        g = grad_energy_eps(u, params)
        assert g.shape == (n, 2)
        np.testing.assert_array_equal(g[[0, -1]], 0.0)
        h = u.grid.h
        z = np.array(u.values)
        nodes = rng.choice(np.arange(1, n - 1), size=min(20, n - 2), replace=False)

        def fun(v):
            zz = z.copy()
            zz[i] = v
            return energy_values(zz, h, params)

        for i in nodes:
            fd = fd_gradient(fun, z[i].copy())
            np.testing.assert_allclose(g[i], fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(g)))

    @pytest.mark.parametrize("gauss_newton", [False, True])
    def test_hessian_banded_matches_gradient_differences(self, gauss_newton):
        rng = np.random.default_rng(5)
        params = ModelParams(0.1, 0.5, 1, 0.3)
        u = random_field(12, rng, params.alpha, wiggle=0.1)
        z = np.array(u.values)
        h = u.grid.h
        ab = hessian_banded(z, h, params, gauss_newton=gauss_newton)
        size = ab.shape[1]
        dense = np.zeros((size, size))
        for k in range(ab.shape[0]):
            off = ab.shape[0] - 1 - k
            idx = np.arange(off, size)
            dense[idx - off, idx] = ab[k, off:]
            dense[idx, idx - off] = ab[k, off:]
        if gauss_newton:
            assert np.all(np.linalg.eigvalsh(dense) > 0)
            return
        step = 1e-6
        fd = np.zeros((size, size))
        for col in range(size):
            zp, zm = z.copy(), z.copy()
            zp[1:-1].reshape(-1)[col] += step
            zm[1:-1].reshape(-1)[col] -= step
            fd[:, col] = (gradient_values(zp, h, params)[1:-1].ravel() - gradient_values(zm, h, params)[1:-1].ravel()) / (
                2 * step
            )
        np.testing.assert_allclose(dense, fd, rtol=1e-5, atol=1e-5 * np.max(np.abs(fd)))

    def test_gauss_newton_direction_descends(self):
        params = ModelParams(0.1, 0.5, 1, 0.3)
        u = random_field(15, np.random.default_rng(2), params.alpha, wiggle=0.02)
        z = np.array(u.values)
        ab = hessian_banded(z, u.grid.h, params, gauss_newton=True)
        g = gradient_values(z, u.grid.h, params)[1:-1].ravel()
        d = solveh_banded(ab, -g)
        assert float(g @ d) < 0


class TestPolarEnergy:
    @pytest.mark.parametrize("M", [0, 1, 3])
    @pytest.mark.parametrize("alpha", [0.0, 1.3])
    def test_matches_cartesian_on_uniform_twist(self, M, alpha):
        params = ModelParams(0.02, 0.5, 2, alpha)
        g = make_grid(301)
        p = uniform_twist_polar(M, params, g)
        assert energy_eps_polar(p, params).total == pytest.approx(
            energy_eps(to_cartesian(p), params).total, rel=1e-10
        )

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([51, 101]))
    def test_matches_cartesian_on_random_fields(self, seed, n):
        rng = np.random.default_rng(seed)
        params = ModelParams(0.05, 0.9, 1, 0.4)
        g = make_grid(n)
        rho = np.abs(1.0 + 0.3 * rng.normal(size=n))
        theta = (TWO_PI + params.alpha) * g.x + 0.2 * rng.normal(size=n)
        p = PolarField(g, rho, theta, 1, params.alpha)
        assert energy_eps_polar(p, params).total == pytest.approx(
            energy_eps(to_cartesian(p), params).total, rel=1e-10
        )

    def test_zero_twist_penalty(self):
        # the chord twist sin(phi)/h misses 2 pi N at O(h^2), so the term is O(h^4)
        params = ModelParams(0.1, 1.0, 2, 0.0)
        terms = [energy_eps_polar(uniform_twist_polar(2, params, make_grid(n)), params).twist_term for n in (101, 201, 401)]
        assert terms[-1] < 1e-5
        for coarse, fine in zip(terms[:-1], terms[1:]):
            assert coarse / fine == pytest.approx(16.0, rel=0.01)

    def test_depressed_modulus_potential_dominates(self):
        g = make_grid(201)
        rho = np.full(201, 0.5)
        values = []
        for eps in (0.1, 0.01, 0.001):
            params = ModelParams(eps, 1.0, 1, 0.0)
            e = energy_eps_polar(PolarField(g, rho, TWO_PI * g.x, 1), params)
            assert e.potential_term > 0
            values.append(e.potential_term / e.total)
        assert values == sorted(values)
        assert values[-1] > 0.9

    def test_phase_gradient_vanishes_on_preferred_twist(self):
        params = ModelParams(0.3, 1.0, 1, 0.0)
        p = uniform_twist_polar(1, params, make_grid(101))
        _, g_theta = grad_energy_eps_polar(p, params)
        np.testing.assert_allclose(g_theta, 0.0, atol=1e-9)

    @pytest.mark.parametrize("n", [51, 101, 501])
    def test_gradient_matches_finite_differences(self, n):
        rng = np.random.default_rng(n)
        params = ModelParams(0.05, 0.8, 1, 0.6)
        g = make_grid(n)
        rho = 1.0 + 0.2 * rng.normal(size=n)
        theta = (TWO_PI + 0.6) * g.x + 0.2 * rng.normal(size=n)
        g_rho, g_theta = polar_gradient_values(rho, theta, g.h, params)
        from cholesteric1d.energy import energy_polar_values

        for i in rng.choice(np.arange(1, n - 1), size=15, replace=False):
            for arr, grad in ((rho, g_rho), (theta, g_theta)):
                ap, am = arr.copy(), arr.copy()
                ap[i] += 1e-6
                am[i] -= 1e-6
                if arr is rho:
                    fp = energy_polar_values(ap, theta, g.h, params).total
                    fm = energy_polar_values(am, theta, g.h, params).total
                else:
                    fp = energy_polar_values(rho, ap, g.h, params).total
                    fm = energy_polar_values(rho, am, g.h, params).total
                fd = (fp - fm) / 2e-6
                assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-6 * np.max(np.abs(grad)))

    def test_polar_hessian_matches_gradient_differences(self):
        rng = np.random.default_rng(9)
        params = ModelParams(0.1, 0.5, 1, 0.3)
        g = make_grid(10)
        rho = 1.0 + 0.1 * rng.normal(size=10)
        theta = (TWO_PI + 0.3) * g.x + 0.1 * rng.normal(size=10)
        ab = polar_hessian_banded(rho, theta, g.h, params)
        size = ab.shape[1]
        dense = np.zeros((size, size))
        for k in range(ab.shape[0]):
            off = ab.shape[0] - 1 - k
            idx = np.arange(off, size)
            dense[idx - off, idx] = ab[k, off:]
            dense[idx, idx - off] = ab[k, off:]

        def flat_grad(r, t):
            gr, gt = polar_gradient_values(r, t, g.h, params)
            return np.column_stack([gr[1:-1], gt[1:-1]]).ravel()

        fd = np.zeros((size, size))
        for col in range(size):
            node, comp = 1 + col // 2, col % 2
            rp, rm, tp, tm = rho.copy(), rho.copy(), theta.copy(), theta.copy()
            if comp == 0:
                rp[node] += 1e-6
                rm[node] -= 1e-6
            else:
                tp[node] += 1e-6
                tm[node] -= 1e-6
            fd[:, col] = (flat_grad(rp, tp) - flat_grad(rm, tm)) / 2e-6
        np.testing.assert_allclose(dense, fd, rtol=1e-5, atol=1e-5 * np.max(np.abs(fd)))


class TestRescaledEnergy:
    def test_integer_twist_constant_w_frozen_oracle(self):
        params = ModelParams(1.0 / 16, 1.0, beta=0.25)
        g = make_grid(101)
        w = uniform_twist_field(0, params.replace(alpha=0.0), g)
        e = energy_rescaled(w, params)
        assert e.total == pytest.approx(ORACLE_RESCALED_W1_N101, rel=1e-12)
        # u = w exp(4 pi i x) evaluated directly
        u = ComplexField.from_complex(g, np.exp(2j * TWO_PI * g.x))
        assert e.total == pytest.approx(energy_eps(u, params).total, rel=1e-12)

    def test_integer_twist_continuum(self):
        params = ModelParams(1.0 / 16, 1.0, beta=0.25)
        e = energy_rescaled(uniform_twist_field(0, params, make_grid(4001)), params)
        assert e.total == pytest.approx(params.eps / 2 * (2 * TWO_PI) ** 2, rel=1e-5)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_identity_with_direct_evaluation(self, seed):
        rng = np.random.default_rng(seed)
        params = ModelParams(0.003, 0.7, alpha=0.9, beta=0.25)
        g = make_grid(4001)
        phase = params.alpha * g.x + 0.3 * np.sin(TWO_PI * g.x) * rng.normal()
        w = ComplexField.from_complex(g, (1 + 0.1 * rng.normal(size=g.n)) * np.exp(1j * phase), params.alpha)
        K = params.twist_floor
        u = ComplexField.from_complex(g, w.as_complex * np.exp(1j * TWO_PI * K * g.x), params.alpha)
        assert energy_rescaled(w, params).total == pytest.approx(energy_eps(u, params).total, rel=1e-9)

    def test_fractional_twist_on_constant_w(self):
        params = ModelParams(0.003, 0.7, alpha=0.0, beta=0.25)
        w = uniform_twist_field(0, params, make_grid(2001))
        A = params.twist_fraction
        assert 0 < A < 1
        # |w| = 1, w' = 0: only the twist density sees the fractional part (up to O((Kh)^2))
        expected = 0.5 * params.L * (TWO_PI * A) ** 2
        assert energy_rescaled(w, params).twist_term == pytest.approx(expected, rel=1e-3)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(4)
        params = ModelParams(0.01, 0.7, alpha=0.9, beta=0.25)
        g = make_grid(301)
        w = ComplexField(g, 1.0 + 0.2 * rng.normal(size=(301, 2)), params.alpha)
        grad = grad_energy_rescaled(w, params)
        z = np.array(w.values)
        for i in rng.choice(np.arange(1, 300), size=10, replace=False):
            for c in range(2):
                zp, zm = z.copy(), z.copy()
                zp[i, c] += 1e-6
                zm[i, c] -= 1e-6
                fd = (energy_rescaled(w.with_values(zp), params).total - energy_rescaled(w.with_values(zm), params).total) / 2e-6
                assert grad[i, c] == pytest.approx(fd, rel=1e-6, abs=1e-6 * np.max(np.abs(grad)))

    def test_requires_beta(self):
        params = ModelParams(0.01, 0.7)
        with pytest.raises(InvalidParameterError):
            energy_rescaled(uniform_twist_field(0, params, make_grid(11)), params)


class TestLimitEnergy:
    def test_no_jump(self):
        g = make_grid(501)
        alpha, N, L = 1.0, 2, 0.8
        j = jump_map_from_function(g, [], lambda xs, k: (TWO_PI * N + alpha) * xs, alpha)
        assert j.jumps == ()
        assert energy_gamma(j, L, TWO_PI * N) == pytest.approx(L / 2 * alpha**2, rel=1e-12)

    def test_one_jump_exact(self):
        g = make_grid(501)
        alpha, N = 1.0, 1
        j = jump_map_from_function(g, [0.5], lambda xs, k: TWO_PI * N * xs + alpha * k, alpha)
        assert energy_gamma(j, 3.0, TWO_PI * N) == pytest.approx(JUMP_COST, abs=1e-12)
        assert JUMP_COST == pytest.approx(0.942809, abs=1e-6)

    def test_two_jumps(self):
        g = make_grid(501)
        j = jump_map_from_function(g, [0.3, 0.7], lambda xs, k: TWO_PI * xs + 0.4 * k + 0.1 * (k == 2), 0.9)
        assert j.jump_count == 2
        assert energy_gamma(j, 1.0, TWO_PI) == pytest.approx(2 * JUMP_COST, abs=1e-12)

    def test_twist_integral_linear_phase(self):
        x = np.linspace(0, 1, 11)
        assert twist_integral(x, 3.0 * x, 1.0) == pytest.approx(4.0)
