"""Simulators and proxy observables: exact identities plus Monte Carlo checks.

MC tolerances are sized from the effective sample count T / (2 tau) of each
run and were verified to hold with slack at the pinned seeds.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from submoments import (
    GradientDiffusionParams,
    HestonParams,
    InsufficientData,
    OUParams,
    ParameterDomain,
    RandomStreamSpec,
    SchemeGridMismatch,
    SimulationDiverged,
    SlowFastParams,
    TrajectoryGrid,
    default_rv_window,
    heston_initial_variance,
    multiplicative_perturbation_observable,
    ou_true_covariance,
    realized_volatility_observable,
    simulate_gradient_diffusion,
    simulate_heston,
    simulate_ou,
    simulate_slow_fast,
    smoothing_observable,
)
from submoments.models import SLOW_FAST_CATALOG


class TestOU:
    def test_domain(self):
        with pytest.raises(ParameterDomain):
            OUParams(mean=0.0, reversion=0.0, noise=1.0).validate()
        with pytest.raises(ParameterDomain):
            OUParams(mean=0.0, reversion=1.0, noise=-1.0).validate()

    def test_degenerate_noise_gives_constant_path(self):
        p = OUParams(mean=2.5, reversion=1.0, noise=0.0)
        g = simulate_ou(p, 100, 0.1, RandomStreamSpec(3))
        assert np.all(g.samples == 2.5)

    def test_true_covariance(self):
        p = OUParams(mean=0.0, reversion=2.0, noise=2.0)
        assert ou_true_covariance(p, 0.0) == pytest.approx(1.0)
        assert ou_true_covariance(p, 0.5) == pytest.approx(math.exp(-1.0))
        with pytest.raises(ParameterDomain):
            ou_true_covariance(p, -0.1)

    def test_l4_norm_closed_form(self):
        assert OUParams(0.0, 1.0, math.sqrt(2.0)).l4_norm == pytest.approx(3.0**0.25)
        assert OUParams(2.0, 1.0, math.sqrt(2.0)).l4_norm == pytest.approx(43.0**0.25)

    def test_reproducible(self):
        p = OUParams(mean=0.0, reversion=1.0, noise=1.0)
        a = simulate_ou(p, 500, 0.1, RandomStreamSpec(9, 4))
        b = simulate_ou(p, 500, 0.1, RandomStreamSpec(9, 4))
        assert np.array_equal(a.samples, b.samples)

    def test_stationary_statistics(self):
        p = OUParams(mean=0.5, reversion=1.0, noise=math.sqrt(2.0))
        g = simulate_ou(p, 200_000, 0.05, RandomStreamSpec(41))
        x = g.samples[:, 0]
        assert float(x.mean()) == pytest.approx(0.5, abs=0.06)
        assert float(x.var()) == pytest.approx(1.0, abs=0.08)
        dev = x - x.mean()
        corr = float(np.mean(dev[:-20] * dev[20:])) / float(x.var())
        assert corr == pytest.approx(math.exp(-1.0), abs=0.03)
        assert float(np.mean(x**4)) ** 0.25 == pytest.approx(p.l4_norm, rel=0.05)

    def test_length_and_step_domain(self):
        p = OUParams(0.0, 1.0, 1.0)
        with pytest.raises(ParameterDomain):
            simulate_ou(p, 0, 0.1, RandomStreamSpec(1))
        with pytest.raises(ParameterDomain):
            simulate_ou(p, 10, 0.0, RandomStreamSpec(1))


QUARTIC = GradientDiffusionParams(potential_coeffs=(0, 0, 0, 0, 0.25), sigma=[[1.0]])


class TestGradientDiffusion:
    def test_validation(self):
        with pytest.raises(ParameterDomain):
            GradientDiffusionParams((0.0, 1.0), [[1.0]]).validate()  # degree < 2
        with pytest.raises(ParameterDomain):
            GradientDiffusionParams((0, 0, 0, 1.0), [[1.0]]).validate()  # odd degree
        with pytest.raises(ParameterDomain):
            GradientDiffusionParams((0, 0, -1.0), [[1.0]]).validate()  # not confining
        with pytest.raises(ParameterDomain):
            GradientDiffusionParams((0, 0, 0.5), [[1.0, 0.0], [2.0, 0.0]]).validate()
        with pytest.raises(ParameterDomain):
            GradientDiffusionParams((0, 0, 0.5), [[1.0, 0.0]]).validate()

    def test_quadratic_potential_matches_ou_law(self):
        # q(u) = u^2 / 2 gives drift -x, i.e. OU with unit reversion
        params = GradientDiffusionParams((0, 0, 0.5), [[1.0]])
        g = simulate_gradient_diffusion(params, 100_000, 0.01, RandomStreamSpec(12))
        x = g.samples[:, 0]
        assert float(x.mean()) == pytest.approx(0.0, abs=0.06)
        assert float(x.var()) == pytest.approx(0.5, abs=0.06)

    def test_quartic_second_moment_matches_quadrature(self):
        num = quad(lambda u: u * u * QUARTIC.stationary_density_unnormalized(u, 1.0), -np.inf, np.inf)[0]
        den = quad(lambda u: QUARTIC.stationary_density_unnormalized(u, 1.0), -np.inf, np.inf)[0]
        oracle = num / den
        assert oracle == pytest.approx(0.478, abs=0.001)
        g = simulate_gradient_diffusion(QUARTIC, 100_000, 0.01, RandomStreamSpec(11))
        assert float(np.mean(g.samples[:, 0] ** 2)) == pytest.approx(oracle, abs=0.07)

    def test_two_coordinates_are_independent_ou(self):
        params = GradientDiffusionParams((0, 0, 0.5), [[1.0, 0.0], [0.0, 2.0]])
        g = simulate_gradient_diffusion(params, 60_000, 0.01, RandomStreamSpec(13))
        assert g.dim == 2
        v = g.samples.var(axis=0)
        assert v[0] == pytest.approx(0.5, abs=0.15)
        assert v[1] == pytest.approx(2.0, abs=0.6)

    def test_coarse_step_rejected_up_front(self):
        steep = GradientDiffusionParams((0, 0, 0, 0, 25.0), [[1.0]])
        with pytest.raises(ParameterDomain, match="drift step"):
            simulate_gradient_diffusion(steep, 100, 0.01, RandomStreamSpec(1))

    def test_divergence_detected(self):
        # step passes the unit-scale precheck but the Euler map is unstable
        # beyond |x| ~ sqrt(2 / delta); every tested seed reaches it
        with np.errstate(all="ignore"), pytest.raises(SimulationDiverged):
            simulate_gradient_diffusion(QUARTIC, 5000, 0.4, RandomStreamSpec(0))


HESTON = HestonParams(reversion=1.0, level=0.04, vol_of_vol=0.2)


class TestHeston:
    def test_domain(self):
        with pytest.raises(ParameterDomain):
            HestonParams(-1.0, 0.04, 0.2).validate()
        with pytest.raises(ParameterDomain):
            simulate_heston(HESTON, 10, 0.01, RandomStreamSpec(1), v0_mode="bogus")
        with pytest.raises(ParameterDomain):
            simulate_heston(HESTON, 10, 0.01, RandomStreamSpec(1), v0_mode=-0.5)

    def test_stationary_draw_moments(self):
        rng = np.random.default_rng(7)
        v0 = heston_initial_variance(HESTON, rng, size=200_000)
        assert float(v0.mean()) == pytest.approx(HESTON.stationary_mean, abs=1e-3)
        assert float(v0.var()) == pytest.approx(HESTON.stationary_variance, rel=0.05)

    def test_variance_path_statistics(self):
        ret, var = simulate_heston(HESTON, 150_000, 0.01, RandomStreamSpec(21))
        v = var.samples[:, 0]
        assert np.all(v >= 0.0)
        assert float(v.mean()) == pytest.approx(0.04, abs=0.004)
        assert float(v.var()) == pytest.approx(HESTON.stationary_variance, rel=0.25)
        assert ret.n_samples == var.n_samples == 150_000

    def test_variance_covariance_formula(self):
        assert HESTON.variance_covariance(0.0) == pytest.approx(8e-4)
        assert HESTON.variance_covariance(2.0) == pytest.approx(8e-4 * math.exp(-2.0))
        with pytest.raises(ParameterDomain):
            HESTON.variance_covariance(-1.0)

    def test_tiny_vol_of_vol_pins_variance_to_level(self):
        calm = HestonParams(reversion=1.0, level=0.04, vol_of_vol=0.001)
        _, var = simulate_heston(calm, 20_000, 0.01, RandomStreamSpec(22))
        assert float(np.max(np.abs(var.samples - 0.04))) < 0.002

    def test_reproducible(self):
        a = simulate_heston(HESTON, 300, 0.01, RandomStreamSpec(5, 2))
        b = simulate_heston(HESTON, 300, 0.01, RandomStreamSpec(5, 2))
        assert np.array_equal(a[0].samples, b[0].samples)
        assert np.array_equal(a[1].samples, b[1].samples)


class TestObservables:
    def test_multiplicative_identity_and_scaling(self):
        x = TrajectoryGrid(np.array([1.0, -2.0, 3.0]), 0.5)
        y = multiplicative_perturbation_observable(x, 0.0)
        assert np.array_equal(y.samples, x.samples) and y.delta == 0.5
        z = multiplicative_perturbation_observable(x, 0.2)
        assert np.allclose(z.samples, 1.2 * x.samples)
        with pytest.raises(ParameterDomain):
            multiplicative_perturbation_observable(x, -0.1)

    def test_smoothing_exact_on_linear_path(self):
        # trapezoid integration is exact for affine paths: Y(t) = t - eps/2
        delta, eps, length = 0.1, 0.5, 40
        times = delta * np.arange(1, length + 1)
        y = smoothing_observable(TrajectoryGrid(times, delta), eps)
        m = 5
        assert y.n_samples == length - m
        expected = times[m:] - eps / 2.0
        assert np.allclose(y.samples[:, 0], expected, atol=1e-12)

    def test_smoothing_constant_path(self):
        x = TrajectoryGrid(np.full(20, 3.25), 0.1)
        y = smoothing_observable(x, 0.3)
        assert np.allclose(y.samples, 3.25, atol=1e-14)

    def test_smoothing_window_must_fit_grid(self):
        x = TrajectoryGrid(np.zeros(20), 0.1)
        with pytest.raises(SchemeGridMismatch):
            smoothing_observable(x, 0.25)
        with pytest.raises(InsufficientData):
            smoothing_observable(TrajectoryGrid(np.zeros(5), 0.1), 0.5)
        with pytest.raises(ParameterDomain):
            smoothing_observable(x, 0.0)

    def test_rv_exact_on_constant_increments(self):
        # power-of-two values keep every intermediate binary-exact
        c, eps = 0.5, 0.0625
        levels = TrajectoryGrid(c * np.arange(1.0, 101.0), eps)
        rv = realized_volatility_observable(levels, eps, window=10)
        assert rv.n_samples == 90
        assert np.all(rv.samples == c * c / eps)

    def test_rv_zero_path(self):
        rv = realized_volatility_observable(TrajectoryGrid(np.zeros(50), 0.01), 0.01, 5)
        assert np.all(rv.samples == 0.0)

    def test_rv_guards(self):
        levels = TrajectoryGrid(np.zeros(50), 0.01)
        with pytest.raises(InsufficientData):
            realized_volatility_observable(TrajectoryGrid(np.zeros(10), 0.01), 0.01, 10)
        with pytest.raises(SchemeGridMismatch):
            realized_volatility_observable(levels, 0.02, 5)
        with pytest.raises(ParameterDomain):
            realized_volatility_observable(levels, 0.01, 0)
        two_dim = TrajectoryGrid(np.zeros((50, 2)), 0.01)
        with pytest.raises(ParameterDomain):
            realized_volatility_observable(two_dim, 0.01, 5)

    def test_rv_tracks_true_variance_level(self):
        ret, _ = simulate_heston(HESTON, 30_000, 0.01, RandomStreamSpec(23))
        rv = realized_volatility_observable(ret, 0.01, 10)
        assert float(rv.samples.mean()) == pytest.approx(0.04, abs=0.01)

    def test_default_rv_window(self):
        assert default_rv_window(0.01) == 10
        assert default_rv_window(0.005) == 15
        with pytest.raises(ParameterDomain):
            default_rv_window(0.0)


class TestSlowFast:
    def test_averaged_drift_matches_gaussian_quadrature(self):
        nodes, weights = np.polynomial.hermite_e.hermegauss(40)
        weights = weights / math.sqrt(2.0 * math.pi)
        for entry in SLOW_FAST_CATALOG.values():
            for x in (-2.0, 0.0, 1.5):
                avg = sum(w * entry.slow_drift(x, y) for y, w in zip(nodes, weights))
                assert avg == pytest.approx(entry.averaged_drift(x), abs=1e-10)

    def test_reduced_models(self):
        assert SLOW_FAST_CATALOG["linear_coupling"].reduced == OUParams(0.0, 1.0, 1.0)
        assert SLOW_FAST_CATALOG["quadratic_coupling"].reduced == OUParams(1.0, 1.0, 1.0)

    def test_coupled_distance_shrinks_with_scale(self):
        def sup_dist(scale):
            x, avg = simulate_slow_fast(
                SlowFastParams(entry="quadratic_coupling", scale=scale),
                20_000, 0.001, RandomStreamSpec(31),
            )
            return float(np.max(np.abs(x.samples - avg.samples)))

        assert sup_dist(0.01) < sup_dist(0.1)

    def test_slow_marginal_near_reduced_law(self):
        x, avg = simulate_slow_fast(
            SlowFastParams(entry="linear_coupling", scale=0.02),
            100_000, 0.002, RandomStreamSpec(32),
        )
        assert float(x.samples.var()) == pytest.approx(0.5, abs=0.2)
        assert float(avg.samples.var()) == pytest.approx(0.5, abs=0.2)
        assert float(avg.samples.mean()) == pytest.approx(0.0, abs=0.15)

    def test_domain(self):
        with pytest.raises(ParameterDomain):
            SlowFastParams(entry="nope", scale=0.1).validate()
        with pytest.raises(ParameterDomain):
            SlowFastParams(entry="linear_coupling", scale=0.0).validate()
        with pytest.raises(ParameterDomain, match="too coarse"):
            simulate_slow_fast(
                SlowFastParams(entry="linear_coupling", scale=0.1),
                100, 0.05, RandomStreamSpec(1),
            )
