"""Benchmark problem definitions, initial-data variants, and oracles."""

import math

import numpy as np
import pytest

from asirk.exceptions import SchemeValidationError
from asirk.problems import (
    LinearRelaxationModel,
    broadwell,
    exact_relaxation_solution,
    expansion_relaxation_solution,
    linear_relaxation,
    make_problem,
    population,
    prototype,
    reference_solution,
    splitmix64_stream,
    van_der_pol,
)
from asirk.harness import RUN_TOL, stepping_method, resolve_scheme, _trajectory
from asirk.integrator import integrate
from asirk.tableau import catalog, is_low_storage


class TestPrototype:
    def test_consistent_initial_value(self):
        assert prototype(1e-3, "C").y0[1] == 1.0

    def test_inconsistent_adds_delta(self):
        assert prototype(1e-3, "IC").y0[1] == 1.05

    def test_well_prepared_expansion(self):
        p = prototype(0.1, "WP")
        assert p.y0[1] == pytest.approx(1.0 + (math.pi / 2) * 0.1 - (math.pi / 2) * 1e-3)

    def test_split_matches_unsplit_rhs(self):
        eps = 0.37
        p = prototype(eps, "C")
        rng = np.random.default_rng(0)
        for _ in range(10):
            y = rng.uniform(-2, 2, 2)
            full = np.array([-y[1], y[0] + (math.sin(y[0]) - y[1]) / eps])
            got = p.ode.f(0.0, y) + p.ode.g(0.0, y)
            assert np.max(np.abs(got - full)) < 1e-14

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(SchemeValidationError):
            prototype(0.0, "C")


class TestVanDerPol:
    def test_variants(self):
        assert van_der_pol(1e-2, "C").y0[1] == -2.0 / 3.0
        assert van_der_pol(1e-2, "IC").y0[1] == -2.0 / 3.0 + 0.05
        eps = 0.2
        z0 = van_der_pol(eps, "WP").y0[1]
        assert z0 == pytest.approx(
            -2 / 3 + (10 / 81) * eps - (292 / 2187) * eps**2 - (1814 / 19683) * eps**3
        )

    def test_endpoint_divides_step(self):
        cfg = van_der_pol(1e-2, "C").config
        assert round(cfg.t_end / cfg.h) * cfg.h == pytest.approx(cfg.t_end)

    def test_split_matches_unsplit_rhs(self):
        eps = 0.09
        p = van_der_pol(eps, "C")
        y = np.array([1.7, -0.4])
        full = np.array([y[1], ((1 - y[0] ** 2) * y[1] - y[0]) / eps])
        got = p.ode.f(0.0, y) + p.ode.g(0.0, y)
        assert np.max(np.abs(got - full)) < 1e-14


class TestBroadwell:
    def test_crest_equilibrium_value(self):
        # dx = 0.25 puts a grid point at the crest x = 1/2 of sin(pi x)
        p = broadwell(1e-2, "C", dx=0.25)
        n = 8
        x = -1.0 + 0.25 * np.arange(n)
        j = int(np.argmin(np.abs(x - 0.5)))
        rho, m, z = p.y0[j], p.y0[n + j], p.y0[2 * n + j]
        assert rho == pytest.approx(1.3)
        assert m == pytest.approx(0.78)
        assert z == pytest.approx(0.884)

    def test_inconsistent_adds_delta_pointwise(self):
        pc = broadwell(1e-2, "C")
        pi = broadwell(1e-2, "IC")
        n = 10
        assert np.allclose(pi.y0[2 * n:] - pc.y0[2 * n:], 0.05)

    def test_conservation_of_rho_and_m(self):
        p = broadwell(1e-2, "C")
        n = 10
        y = p.y0.copy()
        rhs = p.ode.f(0.0, y)
        step = y + 1e-2 * rhs  # one explicit Euler step of the transport part
        for sl in (slice(0, n), slice(n, 2 * n)):
            drift = abs(step[sl].sum() - y[sl].sum()) / abs(y[sl].sum())
            assert drift < 1e-14

    def test_source_vanishes_on_equilibrium(self):
        p = broadwell(1e-3, "C")
        g = p.ode.g(0.0, p.y0)
        assert np.max(np.abs(g)) < 1e-12

    def test_split_matches_unsplit_rhs(self):
        eps, dx, n = 0.05, 0.2, 10
        p = broadwell(eps, "C")
        rng = np.random.default_rng(1)
        y = np.abs(rng.uniform(0.5, 1.5, 3 * n))
        rho, m, z = y[:n], y[n:2 * n], y[2 * n:]
        mp, mm = np.roll(m, -1), np.roll(m, 1)
        zp, zm = np.roll(z, -1), np.roll(z, 1)
        full = np.concatenate([
            -(mp - mm) / (2 * dx) + (zp - 2 * z + zm) / (2 * dx),
            -(zp - zm) / (2 * dx) + (mp - 2 * m + mm) / (2 * dx),
            -(mp - mm) / (2 * dx) + (zp - 2 * z + zm) / (2 * dx)
            + (rho**2 + m**2 - 2 * rho * z) / (2 * eps),
        ])
        got = p.ode.f(0.0, y) + p.ode.g(0.0, y)
        assert np.max(np.abs(got - full)) < 1e-13

    def test_bad_dx_rejected(self):
        with pytest.raises(SchemeValidationError):
            broadwell(1e-2, "C", dx=0.3)


@pytest.mark.parametrize("factory,eps_field", [
    (prototype, 1), (van_der_pol, 1), (broadwell, None),
])
def test_well_prepared_tends_to_consistent(factory, eps_field):
    eps = 1e-12
    pc = factory(eps, "C")
    pw = factory(eps, "WP")
    assert np.max(np.abs(pc.y0 - pw.y0)) < 1e-11


class TestPopulation:
    def test_birth_rate_split(self):
        p = population(0.02)
        n = 100
        x = np.arange(n) / n
        y = np.zeros(n)
        f0 = p.ode.f(0.0, y)
        # b(x, 0) = r_b(x), death term zero at P = 0
        assert f0[int(0.25 * n)] == pytest.approx(1.0)
        assert f0[int(0.75 * n)] == pytest.approx(100.0)

    def test_saturation_limits(self):
        p = population(0.02)
        big = np.full(100, 1e9)
        f_big = p.ode.f(0.0, big) + big  # remove death term
        assert np.max(np.abs(f_big)) < 1e-5

    def test_seed_determinism(self):
        a = population(0.02, seed=42).y0
        b = population(0.02, seed=42).y0
        c = population(0.02, seed=43).y0
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_forcing_range(self):
        y0 = population(0.04).y0
        assert np.all((y0 >= 0.8) & (y0 < 1.2))

    def test_splitmix64_known_answers(self):
        # first outputs of the documented SplitMix64 stream for seed 42
        got = splitmix64_stream(42, 3)
        state = 42
        expect = []
        for _ in range(3):
            state = (state + 0x9E3779B97F4A7C15) & (2**64 - 1)
            z = state
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & (2**64 - 1)
            z ^= z >> 31
            expect.append((z >> 11) / 2.0**53)
        assert np.array_equal(got, np.array(expect))

    def test_diffusion_is_affine(self):
        p = population(0.02)
        assert p.ode.g_matrix is not None
        y = np.arange(100.0)
        assert np.allclose(p.ode.g(0.0, y), p.ode.g_matrix @ y)


class TestLinearRelaxation:
    def test_exact_vs_expansion(self):
        m = LinearRelaxationModel(1, 1, 1, 1, 1, eps=1e-6)
        y0 = m.consistent_state()
        exact = exact_relaxation_solution(m, y0, 1e-3)
        approx = expansion_relaxation_solution(m, 1.0, 1e-3)
        assert np.max(np.abs(exact - approx)) < 1e-8

    def test_decoupled_case(self):
        m = LinearRelaxationModel(0.7, 0.0, 0.3, -0.2, 0.0, eps=1e-3)
        exact = exact_relaxation_solution(m, np.array([2.0, 0.0]), 0.5)
        assert exact[0] == pytest.approx(2.0 * math.exp(0.35), rel=1e-12)

    def test_one_step_error_shrinks_between_first_and_third_order(self):
        m = LinearRelaxationModel(eps=1e-5)
        prob = linear_relaxation(m)
        method = is_low_storage(catalog("ASIRK-LSe(3,2)"))
        errs = []
        for h in (0.02, 0.01):
            run = integrate(method, prob.ode, prob.y0, 0.0, h, h, config=RUN_TOL)
            exact = exact_relaxation_solution(m, prob.y0, h)
            errs.append(abs(run.y[1] - exact[1]))
        ratio = errs[0] / errs[1]
        assert 1.8 <= ratio <= 8.2

    def test_split_matches_unsplit_rhs(self):
        m = LinearRelaxationModel(eps=0.02)
        prob = linear_relaxation(m)
        y = np.array([0.3, -1.1])
        full = m.matrix() @ y
        got = prob.ode.f(0.0, y) + prob.ode.g(0.0, y)
        assert np.max(np.abs(got - full)) < 1e-13


class TestReferenceSolution:
    def test_cross_scheme_agreement_nonstiff(self):
        prob = prototype(1.0, "C")
        ref = reference_solution(prob, 0.05, refine=1024, check=False)
        other = _trajectory(stepping_method(resolve_scheme("zhong")), prob,
                            0.05 / 1024)
        assert np.max(np.abs(ref.states[-1] - other[-1])) < 1e-9

    def test_matches_exact_oracle_on_linear_model(self):
        m = LinearRelaxationModel(eps=1e-3)
        prob = linear_relaxation(m)
        ref = reference_solution(prob, 0.05, refine=8192, t_end=0.25, check=False)
        for k, t in enumerate(ref.times):
            exact = exact_relaxation_solution(m, prob.y0, t)
            assert np.max(np.abs(ref.states[k] - exact)) < 1e-10

    def test_zero_span(self):
        prob = prototype(1e-2, "C")
        ref = reference_solution(prob, 0.05, t_end=0.0)
        assert np.array_equal(ref.states[0], prob.y0)
        assert len(ref.times) == 1

    def test_richardson_uncertainty_shrinks_second_order(self):
        prob = prototype(1e-2, "C")
        coarse = reference_solution(prob, 0.5, refine=64, check=True)
        fine = reference_solution(prob, 0.5, refine=256, check=True)
        assert coarse.uncertainty > 0
        assert fine.uncertainty < coarse.uncertainty / 8


def test_registry_dispatch():
    p = make_problem("prototype", eps=1e-2, variant="C")
    assert p.name == "prototype"
    with pytest.raises(SchemeValidationError):
        make_problem("heat-equation")
