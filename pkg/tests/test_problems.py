import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpinn_lab import problems as P
from dpinn_lab.errors import DegenerateProblemError, DomainError, InvalidInputError
from dpinn_lab.netcore import NetJet

# frozen from direct closed-form evaluation
EXACT_HALF_EPS1 = (math.exp(0.5) - 1.0) / (math.e - 1.0)  # 0.3775406687981454
MU_PE4 = 0.5 * (2.0 / math.tanh(2.0) - 1.0)  # 0.5373147207275480


def sign_alternations(values):
    d = np.diff(values)
    s = np.sign(d[np.abs(d) > 1e-14])
    return int(np.sum(s[1:] * s[:-1] < 0))


def test_frozen_values():
    assert EXACT_HALF_EPS1 == pytest.approx(0.377541, abs=1e-6)
    assert MU_PE4 == pytest.approx(0.537314, abs=1e-6)


def test_exact_steady_boundaries_and_midpoint():
    p = P.SteadyAdvDiff(c=1, eps=1)
    assert P.exact_steady(p, 0.0) == 0.0
    assert P.exact_steady(p, 1.0) == 1.0
    assert P.exact_steady(p, 0.5) == pytest.approx(EXACT_HALF_EPS1, rel=1e-14)


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01, -0.1, 1e-4, -1e-4])
def test_exact_steady_boundaries_exact(eps):
    p = P.SteadyAdvDiff(c=1, eps=eps, u_left=0.3, u_right=-0.7)
    assert P.exact_steady(p, 0.0) == 0.3
    assert P.exact_steady(p, 1.0) == -0.7
    assert np.all(np.isfinite(P.exact_steady(p, np.linspace(0, 1, 101))))


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01, -0.1])
def test_exact_steady_satisfies_ode(eps):
    p = P.SteadyAdvDiff(c=1, eps=eps)
    h = 1e-4
    x = np.random.default_rng(0).uniform(2 * h, 1 - 2 * h, 100)
    u = lambda s: P.exact_steady(p, s)
    d1 = (8 * (u(x + h) - u(x - h)) - (u(x + 2 * h) - u(x - 2 * h))) / (12 * h)
    d2 = (-u(x + 2 * h) + 16 * u(x + h) - 30 * u(x) + 16 * u(x - h) - u(x - 2 * h)) / (12 * h * h)
    res = eps * d2 - p.c * d1
    assert np.max(np.abs(res)) < 1e-6 * max(1.0, np.max(np.abs(d1)))


def test_exact_steady_errors():
    with pytest.raises(DegenerateProblemError):
        P.exact_steady(P.SteadyAdvDiff(eps=0.0), 0.5)
    with pytest.raises(DomainError):
        P.exact_steady(P.SteadyAdvDiff(), 1.5)


def test_exact_unsteady_examples():
    pulse = P.SquarePulse(center=0.25, width=0.2, height=1.0)
    p = P.UnsteadyAdvection(speed=0.5, initial_profile=pulse)
    assert P.exact_unsteady(p, 0.5, 0.5) == 1.0
    xs = np.linspace(0, 1, 51)
    assert np.array_equal(P.exact_unsteady(p, xs, 0.0), pulse(xs))
    still = P.UnsteadyAdvection(speed=0.0, initial_profile=pulse)
    assert np.array_equal(P.exact_unsteady(still, xs, 0.8), pulse(xs))


def test_square_pulse_half_open():
    pulse = P.SquarePulse(center=0.5, width=0.5)
    assert pulse(0.25) == 1.0
    assert pulse(0.75) == 0.0
    with pytest.raises(InvalidInputError):
        P.SquarePulse(width=0.0)


def test_pulse_mass_conserved():
    p = P.UnsteadyAdvection(speed=0.5, initial_profile=P.SquarePulse(0.3, 0.2))
    x = np.linspace(0, 1, 10_000)
    dx = x[1] - x[0]
    # shifts that are whole grid steps keep the sampled pulse identical
    masses = [np.trapezoid(P.exact_unsteady(p, x, m * dx / p.speed), x)
              for m in range(0, 4000, 500)]
    assert np.ptp(masses) < 1e-6


def test_residual_examples():
    p = P.SteadyAdvDiff(c=1, eps=0.1)
    assert P.residual(p, NetJet(0.3, 1.0, 2.0)) == pytest.approx(-0.8, abs=1e-15)
    adv = P.UnsteadyAdvection(speed=0.7)
    assert P.residual(adv, NetJet(2.0, 0.0, 0.0, 0.0)) == 0.0
    burg = P.Burgers(eps=0.1)
    assert P.residual(burg, NetJet(2.0, 3.0, 4.0, 5.0)) == pytest.approx(5 + 6 - 0.4)


def test_exact_jets_have_small_residual():
    p = P.SteadyAdvDiff(c=1, eps=0.2)
    r = p.c / p.eps
    x = np.linspace(0.05, 0.95, 20)
    den = math.expm1(r)
    jet = NetJet(0.0, 0.0, 0.0)
    for xi in x:
        d1 = r * math.exp(r * xi) / den
        jet = NetJet(P.exact_steady(p, xi), d1, r * d1)
        assert abs(P.residual(p, jet)) < 1e-6


def test_flux_examples():
    p = P.SteadyAdvDiff(c=1, eps=1)
    assert P.flux(p, NetJet(0.0, 0.0, 0.0)) == 0.0
    assert P.flux(p, NetJet(1.0, 1.0, 0.0)) == 0.0
    # flux along the exact solution is constant, so its derivative (the residual) vanishes
    q = P.SteadyAdvDiff(c=1, eps=0.3)
    x = np.linspace(0.1, 0.9, 9)
    h = 1e-5
    u = lambda s: P.exact_steady(q, s)
    du = (u(x + h) - u(x - h)) / (2 * h)
    F = q.eps * du - q.c * u(x)
    assert np.ptp(F) < 1e-8


def test_peclet():
    assert P.peclet(1, 0.1, 0.05) == pytest.approx(2.0)
    assert P.peclet(0, 0.1, 0.05) == 0.0
    assert P.peclet(1, 0.1, 0.01) == pytest.approx(10.0)


def test_cds_low_peclet_accurate():
    p = P.SteadyAdvDiff(c=1, eps=1)
    s = P.cds_solve(p, 10)
    assert np.max(np.abs(s.values - P.exact_steady(p, s.grid))) < 1e-2


def test_cds_diffusion_limit_is_line():
    p = P.SteadyAdvDiff(c=1, eps=1e8, u_left=1.0, u_right=3.0)
    s = P.cds_solve(p, 10)
    assert np.allclose(s.values, 1.0 + 2.0 * s.grid, atol=1e-7)


def test_cds_oscillates_uds_monotone_at_pe10():
    p = P.SteadyAdvDiff(c=1, eps=0.01)
    cds, uds = P.cds_solve(p, 10), P.uds_solve(p, 10)
    assert sign_alternations(cds.values) >= 4
    assert sign_alternations(uds.values) == 0
    assert np.all(np.diff(uds.values) >= 0)


def test_uds_matches_cds_at_small_peclet():
    p = P.SteadyAdvDiff(c=1e-6, eps=1.0)
    assert np.allclose(P.cds_solve(p, 10).values, P.uds_solve(p, 10).values, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3).filter(lambda c: abs(c) > 1e-3), st.floats(0.01, 2.0),
       st.floats(-1, 1), st.floats(-1, 1), st.integers(2, 40))
def test_fd_boundaries_bit_exact(c, eps, ul, ur, n):
    p = P.SteadyAdvDiff(c=c, eps=eps, u_left=ul, u_right=ur)
    for s in (P.cds_solve(p, n), P.uds_solve(p, n)):
        assert s.values[0] == ul and s.values[-1] == ur
        assert s.grid.shape == s.values.shape == (n + 1,)
    uds = P.uds_solve(p, n)
    lo, hi = min(ul, ur), max(ul, ur)
    assert np.all(uds.values >= lo - 1e-12) and np.all(uds.values <= hi + 1e-12)


def test_fd_needs_two_cells():
    with pytest.raises(InvalidInputError):
        P.cds_solve(P.SteadyAdvDiff(), 1)


def test_artificial_diffusion_values():
    assert P.artificial_diffusion(0.5, 2.0, 1.0) == pytest.approx(MU_PE4, rel=1e-12)
    assert P.artificial_diffusion_expanded(0.5, 2.0, 1.0) == pytest.approx(MU_PE4, rel=1e-12)
    assert P.artificial_diffusion(1.0, 1e-9, 1.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DegenerateProblemError):
        P.artificial_diffusion(0.0, 1.0, 0.1)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 30.0))
def test_artificial_diffusion_forms_agree(pe):
    a = 0.7
    assert P.artificial_diffusion(a, pe * a, 1.0) == pytest.approx(
        P.artificial_diffusion_expanded(a, pe * a, 1.0), rel=1e-8, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e-1))
def test_artificial_diffusion_small_peclet_series(pe):
    # the raw exponential form cancels catastrophically here; compare with the series
    a = 0.7
    series = a * (pe * pe / 12.0 - pe**4 / 720.0)
    assert P.artificial_diffusion(a, pe * a, 1.0) == pytest.approx(series, rel=1e-6, abs=1e-18)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.2, 3.0), st.integers(2, 30),
       st.sampled_from([-1.0, 1.0]))
def test_artificial_diffusion_nodally_exact(eps, c, n, sign):
    p = P.SteadyAdvDiff(c=sign * c, eps=eps)
    s = P.cds_artificial_solve(p, n)
    assert np.max(np.abs(s.values - P.exact_steady(p, s.grid))) < 1e-8
