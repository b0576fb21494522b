import math

import numpy as np
import pytest
from scipy import integrate

from passlab.analysis import (
    OutageSpec,
    QuadratureError,
    adaptive_simpson,
    conventional_outage,
    conventional_position,
    critical_power,
    fixed_array_gain,
    fixed_distance,
    layout_distance,
    loglog_fit,
    movable_pa_distance,
    outage_closed_form,
    outage_full_closed_form,
    outage_monte_carlo,
    outage_ordering_check,
)
from passlab.beamforming import PowerConfig
from passlab.geometry import PaLayout, SystemGeometry


def mc(spec, geo, radio, power, seed=0, **kw):
    return outage_monte_carlo(spec, geo, radio, power, np.random.default_rng(seed), **kw)


def overhead(y):
    return np.stack([np.full_like(y, 15.0), y, np.full_like(y, 10.0)], axis=1)


HIGH = PowerConfig(1e6, 1e-11)


class TestSpec:
    def test_threshold(self):
        assert OutageSpec(2.0, 0.1, 15.0).snr_threshold == 3.0

    @pytest.mark.parametrize("kw", [dict(rate_threshold=0.0), dict(density=-1.0), dict(trials=0)])
    def test_invalid(self, kw):
        base = dict(rate_threshold=1.0, density=0.1, user_x=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            OutageSpec(**base)


class TestQuadrature:
    def test_polynomial_exact(self):
        assert adaptive_simpson(lambda x: x**3 - 2 * x, 0.0, 2.0) == pytest.approx(0.0, abs=1e-12)

    def test_against_scipy(self):
        f = lambda y: math.exp(-0.3 * math.sqrt(100 + (y - 4.5) ** 2))
        ref, _ = integrate.quad(f, 0, 12, epsabs=1e-13)
        assert adaptive_simpson(f, 0, 12) == pytest.approx(ref, abs=1e-8)

    def test_non_convergence(self):
        with pytest.raises(QuadratureError):
            adaptive_simpson(lambda x: math.sin(1 / x) if x else 0.0, 0.0, 1.0, tol=1e-14, max_depth=8)


class TestClosedForm:
    def test_zero_density(self, geo_v):
        assert outage_closed_form(OutageSpec(1.0, 0.0, 15.0), geo_v) == 0.0
        assert conventional_outage(OutageSpec(1.0, 0.0, 15.0), geo_v) == 0.0

    @pytest.mark.parametrize("phi,c", [(0.05, 10.0), (0.2, 13.0)])
    def test_constant_distance(self, geo_v, phi, c):
        got = outage_closed_form(OutageSpec(1.0, phi, 15.0), geo_v, lambda y: np.full(np.shape(y), c))
        assert got == pytest.approx(1 - math.exp(-phi * c), abs=1e-10)

    def test_piecewise_geometry_against_scipy(self, geo_v):
        spec = OutageSpec(1.0, 0.1, 15.0)
        d = movable_pa_distance(geo_v, 15.0)
        ref, _ = integrate.quad(lambda y: math.exp(-0.1 * float(d(y))), 0, 12, points=[1.5, 4.5, 7.5], epsabs=1e-13)
        assert outage_closed_form(spec, geo_v) == pytest.approx(1 - ref / 12, abs=1e-8)

    def test_matches_monte_carlo(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.1, 15.0, trials=100_000)
        est = mc(spec, geo_v, radio, HIGH, seed=3)
        assert est.covers(outage_closed_form(spec, geo_v))

    def test_layout_distance_agrees_with_movable(self, geo_v):
        # a PA parked at x1 on every waveguide realises d_min exactly
        layout = PaLayout(np.full((16, 4), 15.0))
        y = np.linspace(0, 12, 9)
        assert np.allclose(layout_distance(geo_v, layout, 15.0)(y), movable_pa_distance(geo_v, 15.0)(y))


class TestConventional:
    def test_equal_when_fixed_antenna_is_the_only_pa(self, geo_v):
        spec = OutageSpec(1.0, 0.05, 15.0)
        psi = conventional_position(geo_v)
        rep = outage_ordering_check(spec, geo_v, fixed_distance(psi, 15.0), psi)
        assert rep.status == "equal" and rep.gap == pytest.approx(0.0, abs=1e-12)

    def test_corner_antenna_is_worse(self, geo_v):
        spec = OutageSpec(1.0, 0.05, 15.0)
        assert conventional_outage(spec, geo_v, (0.0, 0.0, 10.0)) >= outage_closed_form(spec, geo_v)

    @pytest.mark.parametrize("phi", [0.01, 0.05, 0.1, 0.5])
    def test_strict_ordering_default_geometry(self, geo_v, phi):
        rep = outage_ordering_check(OutageSpec(2.0, phi, 15.0), geo_v)
        assert rep.status == "strict" and rep.gap > 0

    def test_gap_rises_then_falls(self, geo_v):
        gaps = [outage_ordering_check(OutageSpec(2.0, phi, 15.0), geo_v).gap for phi in (0.001, 0.1, 1.0, 5.0)]
        assert gaps[1] > gaps[0] and gaps[1] > gaps[3]


class TestMonteCarlo:
    def test_no_blockage_high_power(self, geo_v, radio):
        assert mc(OutageSpec(2.0, 0.0, 15.0, trials=1000), geo_v, radio, HIGH).estimate == 0.0

    def test_dense_blockage(self, geo_v, radio):
        assert mc(OutageSpec(2.0, 50.0, 15.0, trials=1000), geo_v, radio, HIGH).estimate == 1.0

    def test_pa_overhead(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.05, 15.0, trials=100_000)
        est = mc(spec, geo_v, radio, HIGH, policy=overhead)
        assert est.covers(1 - math.exp(-0.5))

    def test_half_width_formula(self, geo_v, radio):
        est = mc(OutageSpec(2.0, 0.1, 15.0, trials=5000), geo_v, radio, HIGH)
        p = est.estimate
        assert est.half_width == pytest.approx(1.96 * math.sqrt(p * (1 - p) / 5000))

    def test_deterministic_per_seed(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.1, 15.0, trials=2000)
        assert mc(spec, geo_v, radio, HIGH, seed=9) == mc(spec, geo_v, radio, HIGH, seed=9)

    def test_fixed_policy_tracks_conventional(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.1, 15.0, trials=100_000)
        est = mc(spec, geo_v, radio, HIGH, seed=4, policy="fixed")
        assert est.covers(conventional_outage(spec, geo_v))

    def test_coverage(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.1, 15.0, trials=4000)
        truth = outage_closed_form(spec, geo_v)
        hits = sum(mc(spec, geo_v, radio, HIGH, seed=s).covers(truth) for s in range(60))
        assert hits / 60 >= 0.93

    def test_monotone_in_density_and_threshold(self, geo_v, radio):
        vals = [outage_closed_form(OutageSpec(1.0, phi, 15.0), geo_v) for phi in (0.01, 0.05, 0.2, 1.0)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        power = PowerConfig(critical_power(OutageSpec(2.0, 0.05, 15.0), geo_v, radio, 1e-11), 1e-11)
        by_rate = [outage_full_closed_form(OutageSpec(R, 0.05, 15.0), geo_v, radio, power) for R in (1.0, 2.0, 3.0)]
        assert all(b >= a for a, b in zip(by_rate, by_rate[1:]))


class TestFullRegime:
    def test_converges_to_high_snr_form(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.05, 15.0)
        pc = critical_power(spec, geo_v, radio, 1e-11)
        full = outage_full_closed_form(spec, geo_v, radio, PowerConfig(1e3 * pc, 1e-11))
        assert abs(full - outage_closed_form(spec, geo_v)) < 0.01

    def test_power_starved_is_certain_outage(self, geo_v, radio):
        spec = OutageSpec(2.0, 0.05, 15.0)
        pc = critical_power(spec, geo_v, radio, 1e-11)
        assert outage_full_closed_form(spec, geo_v, radio, PowerConfig(0.5 * pc, 1e-11)) == pytest.approx(1.0)

    @pytest.mark.parametrize("frac", [0.95, 0.98])
    def test_partial_coverage_matches_monte_carlo(self, geo_v, radio, frac):
        spec = OutageSpec(2.0, 0.05, 15.0, trials=100_000)
        power = PowerConfig(frac * critical_power(spec, geo_v, radio, 1e-11), 1e-11)
        full = outage_full_closed_form(spec, geo_v, radio, power)
        assert full > outage_closed_form(spec, geo_v)
        assert mc(spec, geo_v, radio, power, seed=1).covers(full)


class TestBaselineAndFit:
    def test_fixed_array_gain_flat_in_L(self, radio):
        users = np.array([[12.0, 3.0, 0.0]])
        gains = [
            fixed_array_gain(radio, SystemGeometry(4, L, 30.0, 12.0, 10.0, 3.0), users, 1.0)[0]
            for L in (4, 8, 16, 32)
        ]
        assert np.allclose(gains, gains[0])

    def test_fixed_array_gain_value(self, radio):
        g = SystemGeometry(1, 1, 30.0, 12.0, 10.0, 3.0)
        gain = fixed_array_gain(radio, g, np.array([[15.0, 6.0, 0.0]]), 2.0)[0]
        assert gain == pytest.approx(2.0 * (radio.gain / 10) ** 2)

    def test_loglog_fit(self):
        sizes = np.array([16, 64, 256, 1024])
        slope, r2 = loglog_fit(sizes, 3e-6 * sizes)
        assert slope == pytest.approx(1.0) and r2 == pytest.approx(1.0)
