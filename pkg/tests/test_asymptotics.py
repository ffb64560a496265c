import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cholesteric1d import asymptotics as asy
from cholesteric1d.core import JUMP_COST, TWO_PI, ComplexField, ModelParams, PolarField, make_grid, uniform_twist_field
from cholesteric1d.energy import energy_eps, energy_gamma, transition_cost
from cholesteric1d.errors import (
    InvalidParameterError,
    NoFitError,
    OverlapError,
    ResolutionError,
    VanishingModulusError,
)
from cholesteric1d.lifting import winding_number

# frozen from scripts/oracles.py
ORACLE_SADDLE_N1_M0_L01 = 2.9167299218
ORACLE_LOCAL_DM1_L1 = 19.7392088022
ORACLE_ALPHA_STAR = 1.37317809594
ORACLE_HALF_LAYER = 0.47140452079103168293


class TestClassifyE0:
    def test_no_jump(self):
        c = asy.classify_e0(1.0, 1.0)
        assert c.kind == asy.NO_JUMP_AT_N
        assert c.predicted_energy == pytest.approx(0.5)
        assert c.winding == 0

    def test_one_jump(self):
        c = asy.classify_e0(1.0, math.pi)
        assert c.kind == asy.ONE_JUMP
        assert c.predicted_energy == pytest.approx(JUMP_COST)

    def test_lower_winding(self):
        c = asy.classify_e0(0.05, 5.8)
        assert c.kind == asy.NO_JUMP_AT_N_MINUS_1
        assert c.winding == -1

    @pytest.mark.parametrize("L", [0.01, 0.5, 2.0, 50.0])
    def test_alpha_zero(self, L):
        c = asy.classify_e0(L, 0.0)
        assert c.kind == asy.NO_JUMP_AT_N
        assert c.predicted_energy == 0.0

    def test_tie_at_half_turn_small_L(self):
        c = asy.classify_e0(0.1, math.pi)
        assert c.kind == asy.TIE
        assert set(c.branches) == {asy.NO_JUMP_AT_N, asy.NO_JUMP_AT_N_MINUS_1}
        assert c.accepts(asy.NO_JUMP_AT_N) and c.accepts(asy.NO_JUMP_AT_N_MINUS_1)

    def test_threshold(self):
        assert math.sqrt(asy.JUMP_THRESHOLD) == pytest.approx(ORACLE_ALPHA_STAR, abs=1e-10)
        below = asy.classify_e0(1.0, ORACLE_ALPHA_STAR - 1e-6)
        above = asy.classify_e0(1.0, ORACLE_ALPHA_STAR + 1e-6)
        assert below.kind == asy.NO_JUMP_AT_N and above.kind == asy.ONE_JUMP
        assert below.boundary_distance < 1e-5

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 5.0), st.floats(0.0, TWO_PI - 1e-9))
    def test_energy_is_minimum_of_candidates(self, L, alpha):
        c = asy.classify_e0(L, alpha)
        expected = min(0.5 * L * alpha**2, 0.5 * L * (TWO_PI - alpha) ** 2, JUMP_COST)
        assert c.predicted_energy == pytest.approx(expected)
        assert c.boundary_distance >= 0.0

    def test_rejects_nonpositive_L(self):
        with pytest.raises(InvalidParameterError):
            asy.classify_e0(0.0, 1.0)


class TestClassifyE0A:
    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 5.0), st.floats(0.0, 3.0))
    def test_reduces_to_integer_case_at_zero_fraction(self, L, alpha):
        a, b = asy.classify_e0A(L, alpha, 0.0), asy.classify_e0(L, alpha)
        assert a.predicted_energy == pytest.approx(b.predicted_energy)
        if b.kind == asy.NO_JUMP_AT_N:
            assert a.kind == asy.NO_JUMP_AT_N and a.winding == 0

    def test_half_fraction_jump(self):
        c = asy.classify_e0A(1.0, 0.0, 0.5)
        assert c.kind == asy.ONE_JUMP

    def test_half_fraction_tie_without_jump(self):
        c = asy.classify_e0A(0.001, 0.0, 0.5)
        assert c.kind == asy.TIE
        assert c.predicted_energy == pytest.approx(0.5 * 0.001 * math.pi**2)
        assert c.accepts(asy.NO_JUMP_AT_N)
        assert not c.accepts(asy.ONE_JUMP)

    def test_winding_follows_fraction(self):
        c = asy.classify_e0A(0.1, 1.0, 0.9)
        assert c.kind == asy.NO_JUMP_AT_N
        assert c.winding == round(0.9 - 1.0 / TWO_PI)

    @pytest.mark.parametrize("A", [-0.1, 1.1])
    def test_rejects_fraction(self, A):
        with pytest.raises(InvalidParameterError):
            asy.classify_e0A(1.0, 1.0, A)


class TestPredictions:
    def test_local_energy(self):
        assert asy.predicted_local_energy(1, ModelParams(0.1, 1.0, 1, 0.0)) == 0.0
        assert asy.predicted_local_energy(1, ModelParams(0.1, 0.5, 1, 1.0)) == pytest.approx(0.25)
        assert asy.predicted_local_energy(2, ModelParams(0.1, 1.0, 1, 0.0)) == pytest.approx(ORACLE_LOCAL_DM1_L1, rel=1e-10)

    def test_saddle(self):
        p = ModelParams(0.1, 0.1, 1, 0.0)
        assert asy.predicted_saddle_energy(0, p) == pytest.approx(ORACLE_SADDLE_N1_M0_L01, abs=1e-9)
        assert asy.predicted_saddle_energy(1, p) == pytest.approx(JUMP_COST)
        assert asy.barrier_lower_bound(0, p, 0.1) == pytest.approx(ORACLE_SADDLE_N1_M0_L01 - 0.1, abs=1e-9)

    def test_constant(self):
        assert asy.predicted_constant(3, ModelParams(0.1, 0.5, 2, 1.0)) == pytest.approx(TWO_PI * 0.5 + 0.5)


class TestFirstIntegral:
    @pytest.mark.parametrize("M", [0, 1, 3])
    def test_unit_modulus_profile(self, M):
        params = ModelParams(0.02, 0.7, 2, 1.1)
        rho = np.ones(201)
        slope = asy.predicted_theta_profile(rho, M, params)
        np.testing.assert_allclose(slope, TWO_PI * M + params.alpha, rtol=1e-12)
        C = asy.predicted_profile_constant(rho, M, params)
        expected = (TWO_PI * M + params.alpha) * (params.L + params.eps) - TWO_PI * params.N * params.L
        assert C == pytest.approx(expected, rel=1e-12)

    def test_flux_of_uniform_twist(self):
        # rho = 1 and constant slope: every cell carries the same flux, and the
        # chord discretisation misses the continuum profile at O(h^2)
        params = ModelParams(0.02, 0.7, 2, 1.1)
        residuals = []
        for n in (101, 201, 401):
            g = make_grid(n)
            p = PolarField(g, np.ones(n), (TWO_PI * 2 + 1.1) * g.x, 2, 1.1)
            flux = asy.first_integral_flux(p, params)
            np.testing.assert_allclose(flux, flux[0], rtol=1e-12)
            residuals.append(asy.theta_profile_residual(p, params))
        for coarse, fine in zip(residuals[:-1], residuals[1:]):
            assert coarse / fine == pytest.approx(4.0, rel=0.02)

    def test_vanishing_modulus(self):
        rho = np.ones(11)
        rho[4] = 0.0
        with pytest.raises(VanishingModulusError):
            asy.predicted_theta_profile(rho, 1, ModelParams(0.1, 1.0, 1))

    def test_converged_solver_matches_profile(self):
        from cholesteric1d.minimize import SolverOptions, minimize_winding_class

        params = ModelParams(0.01, 0.5, 2, 1.0)
        rep = minimize_winding_class(2, 0.5, params, SolverOptions(grad_tol=1e-9), make_grid(2001))
        slope = np.diff(rep.field.theta) / rep.field.grid.h
        profile = asy.predicted_theta_profile(rep.field.rho, 2, params)
        # a 1e-9 gradient in theta moves the slope by at most about grad_tol / (h L)
        assert np.max(np.abs(slope - profile)) < 10 * 1e-9 / (rep.field.grid.h * params.L)


class TestRecovery:
    def test_resolution(self):
        with pytest.raises(ResolutionError):
            asy.build_recovery_sequence(asy.one_jump_map(make_grid(101), 1, 1.0), 0.01, make_grid(101))

    def test_overlap(self):
        from cholesteric1d.core import jump_map_from_function

        g = make_grid(8001)
        j = jump_map_from_function(g, [0.5, 0.52], lambda xs, k: TWO_PI * xs + 0.7 * k, 1.4)
        with pytest.raises(OverlapError):
            asy.build_recovery_sequence(j, 1e-3, g)

    def test_no_jump_map_is_uniform_twist(self):
        params = ModelParams(1e-3, 0.5, 1, 1.0)
        g = make_grid(8001)
        u = asy.build_recovery_sequence(asy.no_jump_map(g, TWO_PI + 1.0, 1.0), params.eps, g)
        np.testing.assert_allclose(u.values, uniform_twist_field(1, params, g).values, atol=1e-12)
        # limit value plus the O(eps) gradient energy of the twist
        expected = 0.5 * params.L * 1.0**2 + 0.5 * params.eps * (TWO_PI + 1.0) ** 2
        assert energy_eps(u, params).total == pytest.approx(expected, rel=1e-4)

    def test_half_layer_oracle(self):
        # continuum cost of one tanh half-layer equals sqrt(2)/3
        assert 2 * ORACLE_HALF_LAYER == pytest.approx(JUMP_COST, rel=1e-15)

    def test_error_decreases_with_eps(self):
        errors = []
        for eps in (1e-2, 5e-3, 2.5e-3, 1e-3):
            g = make_grid(int(math.ceil(8 / eps)) + 1)
            params = ModelParams(eps, 0.5, 1, 1.0)
            j = asy.one_jump_map(g, 1, 1.0)
            u = asy.build_recovery_sequence(j, eps, g)
            errors.append(energy_eps(u, params).total - energy_gamma(j, params.L, params.preferred_twist))
        assert all(e > 0 for e in errors)
        assert errors == sorted(errors, reverse=True)
        assert errors[-1] < 0.05

    def test_zero_at_dip_node(self):
        g = make_grid(8001)
        u = asy.build_recovery_sequence(asy.one_jump_map(g, 1, 1.0, 0.3), 1e-3, g)
        assert u.modulus[int(np.argmin(np.abs(g.x - 0.3)))] == 0.0

    def test_boundary_jump(self):
        from cholesteric1d.core import jump_map_from_function

        eps = 1e-3
        g = make_grid(8001)
        j = jump_map_from_function(g, [], lambda xs, k: 0.5 + TWO_PI * xs, 0.5)
        assert j.jumps == (0.0,)
        u = asy.build_recovery_sequence(j, eps, g)
        centre = math.sqrt(eps) + eps**2
        assert u.modulus[int(np.argmin(np.abs(g.x - centre)))] == 0.0
        params = ModelParams(eps, 0.5, 1, 0.5)
        assert transition_cost(u, params) == pytest.approx(JUMP_COST, rel=0.05)


class TestRescaling:
    def test_integer_twist_gives_constant_w(self):
        params = ModelParams(1.0 / 16, 1.0, beta=0.25)
        g = make_grid(201)
        u = ComplexField.from_complex(g, np.exp(2j * TWO_PI * g.x))
        np.testing.assert_allclose(asy.rescale_to_w(u, params).as_complex, 1.0, atol=1e-13)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        params = ModelParams(0.003, 0.5, alpha=0.4, beta=0.25)
        g = make_grid(501)
        u = ComplexField(g, rng.normal(size=(501, 2)), 0.4)
        back = asy.rescale_from_w(asy.rescale_to_w(u, params), params)
        np.testing.assert_allclose(back.values, u.values, atol=1e-14)

    @pytest.mark.parametrize("M", [5, 7, 9])
    def test_winding_shift(self, M):
        params = ModelParams(0.003, 0.5, alpha=0.4, beta=0.25)
        g = make_grid(2001)
        u = uniform_twist_field(M, params, g)
        w = ComplexField(g, asy.rescale_to_w(u, params).values, 0.4)
        assert winding_number(w) == winding_number(u) - params.twist_floor

    def test_microscale_identity(self):
        eps, beta = 0.003, 0.25
        g = make_grid(1001)
        v = asy.microscale_v(TWO_PI * eps**-beta * g.x, eps, beta)
        np.testing.assert_allclose(v, g.x, atol=1e-13)
        assert asy.h1_error(v, g) == pytest.approx(0.0, abs=1e-10)

    def test_eps_for_fraction(self):
        eps = asy.eps_for_fraction(6, 0.5, 0.25)
        p = ModelParams(eps, 1.0, beta=0.25)
        assert p.twist_floor == 6
        assert p.twist_fraction == pytest.approx(0.5, abs=1e-10)

    def test_weak_probe_of_fast_rotation_is_small(self):
        g = make_grid(20001)
        slow = ComplexField.from_complex(g, np.exp(1j * TWO_PI * g.x))
        fast = ComplexField.from_complex(g, np.exp(1j * TWO_PI * 40 * g.x))
        phi = lambda x: np.exp(1j * TWO_PI * x)  # noqa: E731
        assert asy.weak_probe(slow, phi) == pytest.approx(1.0, abs=1e-6)
        assert asy.weak_probe(fast, phi) < 1e-3


class TestExtrapolation:
    def test_first_order(self):
        eps = [0.04, 0.02, 0.01, 0.005]
        limit, order = asy.extrapolate_eps([(e, 1 + e) for e in eps])
        assert limit == pytest.approx(1.0, abs=1e-6)
        assert order == pytest.approx(1.0, abs=1e-6)

    def test_half_order(self):
        eps = [0.04, 0.02, 0.01, 0.005]
        limit, order = asy.extrapolate_eps([(e, 1 + math.sqrt(e)) for e in eps])
        assert order == pytest.approx(0.5, abs=1e-6)
        assert limit == pytest.approx(1.0, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(0.3, 2.5))
    def test_power_law_recovered(self, limit, coeff, order):
        eps = [0.08, 0.04, 0.02, 0.01]
        got_limit, got_order = asy.extrapolate_eps([(e, limit + coeff * e**order) for e in eps])
        assert got_order == pytest.approx(order, rel=1e-6)
        assert got_limit == pytest.approx(limit, abs=1e-6)

    def test_local_minimizer_energies(self):
        from cholesteric1d.minimize import SolverOptions, minimize_winding_class

        pairs = []
        for eps in (4e-4, 2e-4, 1e-4):
            params = ModelParams(eps, 0.5, 2, 1.0)
            rep = minimize_winding_class(2, 0.5, params, SolverOptions(grad_tol=1e-9), make_grid(int(8 / eps) + 1))
            pairs.append((eps, rep.energy))
        limit, _ = asy.extrapolate_eps(pairs)
        assert limit == pytest.approx(0.25, abs=1e-3)

    @pytest.mark.parametrize(
        "pairs",
        [
            [(0.1, 1.0), (0.05, 1.1)],
            [(0.05, 1.0), (0.1, 1.1), (0.2, 1.2)],
            [(0.1, 1.0), (0.05, 1.2), (0.025, 1.1)],
            [(0.1, 1.0), (0.05, 1.1), (0.025, 1.3)],
        ],
    )
    def test_no_fit(self, pairs):
        with pytest.raises(NoFitError) as info:
            asy.extrapolate_eps(pairs)
        assert info.value.data == pairs

    def test_constant_data(self):
        assert asy.extrapolate_eps([(0.1, 2.0), (0.05, 2.0), (0.02, 2.0)]) == (2.0, math.inf)

    def test_observed_order(self):
        assert asy.observed_order([0.1, 0.05, 0.025], [0.01, 0.0025, 0.000625]) == pytest.approx(2.0)


class TestSweeps:
    @pytest.mark.parametrize("N", [0, 1])
    def test_alpha_zero_cell(self, N):
        eps = 0.005
        row = asy.phase_diagram_cell(1.0, 0.0, ModelParams(eps, 1.0, N, 0.0), grid=make_grid(4001))
        assert row["observed"] == asy.NO_JUMP_AT_N
        assert row["status"] == "agree"
        # the zero-twist-penalty state still pays 2 (pi N)^2 eps in gradient energy
        assert row["energy"] <= 2 * (math.pi * N) ** 2 * eps + 1e-3
        assert row["recovery_energy"] >= row["energy"]
        assert set(asy.PHASE_TABLE_COLUMNS) <= set(row)

    def test_summary_and_flip(self):
        rows = [
            dict(L=1.0, alpha=a, jumps=int(a > 1.4), status="agree", boundary_distance=abs(a - 1.37))
            for a in (0.5, 1.0, 1.3, 1.5, 2.0)
        ]
        rows.append(dict(L=2.0, alpha=1.0, jumps=1, status="failed", boundary_distance=0.5))
        s = asy.sweep_summary(rows)
        assert s["cells"] == 6 and s["failed"] == 1
        assert s["interior_cells"] == 4
        assert asy.flip_location(rows, 1.0) == (1.3, 1.5)
        assert asy.flip_location(rows, 3.0) is None

    @pytest.mark.parametrize("jumps, rel, kind", [(1, None, asy.ONE_JUMP), (0, 0, asy.NO_JUMP_AT_N), (0, -1, asy.NO_JUMP_AT_N_MINUS_1)])
    def test_observed_kind(self, jumps, rel, kind):
        assert asy.observed_kind(jumps, rel) == kind
