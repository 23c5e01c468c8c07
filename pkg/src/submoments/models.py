"""Stationary process simulators and proxy-observable constructors.

Each simulator returns trajectories on the 1-based uniform grid of
:mod:`submoments.grids`, drawing noise from counter-based streams so a
``(master_seed, replication, role)`` triple pins the path exactly.

The observables turn a hidden trajectory into the sequence an instrument
would deliver: a multiplicative distortion, a moving-average smoothing, or
a realized-variance estimate built from price returns.  Their distance to
the hidden path is the proxy error the scheme rules in
:mod:`submoments.schemes` are calibrated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import lfilter

from .errors import (
    InsufficientData,
    ParameterDomain,
    SchemeGridMismatch,
    SimulationDiverged,
)
from .grids import RandomStreamSpec, StreamRole, TrajectoryGrid
from .schemes import BoundInputs, DecorrelationProfile

_DIVERGENCE_CHECK_EVERY = 512


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OUParams:
    """Scalar mean-reverting diffusion dX = -reversion (X - mean) dt + noise dW.

    ``noise = 0`` is accepted as the degenerate constant-path limit.
    """

    mean: float
    reversion: float
    noise: float

    def validate(self) -> None:
        if not np.isfinite([self.mean, self.reversion, self.noise]).all():
            raise ParameterDomain("parameters must be finite")
        if self.reversion <= 0:
            raise ParameterDomain(f"reversion must be > 0, got {self.reversion}")
        if self.noise < 0:
            raise ParameterDomain(f"noise must be >= 0, got {self.noise}")

    @property
    def stationary_variance(self) -> float:
        return self.noise**2 / (2.0 * self.reversion)

    @property
    def stationary_std(self) -> float:
        return math.sqrt(self.stationary_variance)

    @property
    def l4_norm(self) -> float:
        """Fourth-moment norm of the stationary marginal N(mean, var)."""
        v = self.stationary_variance
        m4 = self.mean**4 + 6.0 * self.mean**2 * v + 3.0 * v**2
        return m4**0.25


def ou_true_covariance(params: OUParams, lag: float) -> float:
    """Stationary covariance ``var * exp(-reversion * lag)`` for lag >= 0."""
    if lag < 0:
        raise ParameterDomain(f"lag must be >= 0, got {lag}")
    params.validate()
    return params.stationary_variance * math.exp(-params.reversion * lag)


def ou_covariance_lipschitz(params: OUParams) -> float:
    """Largest slope of the covariance in the lag, attained at lag 0."""
    return params.reversion * params.stationary_variance


def ou_decorrelation_profile(params: OUParams) -> DecorrelationProfile:
    """Exponential envelope for covariances of first and second moment words.

    For words drawn from ``{X_s, X_s X_t}`` separated by a gap ``T``, Wick
    pairing of the centered Gaussian parts bounds the covariance by
    ``c * exp(-reversion * T)`` with
    ``c = max(var, 2|mean| var, 4 mean^2 var + 2 var^2)`` (single-single,
    single-pair, and pair-pair words respectively).
    """
    params.validate()
    v = params.stationary_variance
    if v == 0.0:
        raise ParameterDomain("degenerate noise has no decorrelation profile")
    c = max(v, 2.0 * abs(params.mean) * v, 4.0 * params.mean**2 * v + 2.0 * v**2)
    return DecorrelationProfile.exponential(c=c, rate=params.reversion)


def ou_bound_inputs(params: OUParams, horizon_a: float) -> BoundInputs:
    """Bound constants of the scalar OU model on lag window [0, horizon_a]."""
    return BoundInputs(
        nu=params.l4_norm,
        horizon_a=horizon_a,
        dim_r=1,
        profile=ou_decorrelation_profile(params),
        lipschitz_lambda=ou_covariance_lipschitz(params),
    )


def simulate_ou(
    params: OUParams, length: int, delta: float, stream: RandomStreamSpec
) -> TrajectoryGrid:
    """Stationary OU path sampled with the exact transition kernel.

    The one-step law is Gaussian, so the path is an AR(1) recursion with
    coefficient ``exp(-reversion * delta)`` started from the stationary
    marginal; no discretization error at any step size.
    """
    params.validate()
    if length < 1:
        raise ParameterDomain(f"length must be >= 1, got {length}")
    if delta <= 0 or not np.isfinite(delta):
        raise ParameterDomain(f"delta must be positive, got {delta}")
    rng = stream.generator()
    z = rng.standard_normal(length)
    phi = math.exp(-params.reversion * delta)
    sig0 = params.stationary_std
    innov = sig0 * math.sqrt(max(0.0, 1.0 - phi * phi))
    shocks = innov * z
    shocks[0] = sig0 * z[0]  # stationary start
    dev = lfilter([1.0], [1.0, -phi], shocks)
    return TrajectoryGrid(params.mean + dev, delta)


# ---------------------------------------------------------------------------
# Gradient diffusions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradientDiffusionParams:
    """Diffusion dX = -grad Q(X) dt + sigma dW with a separable polynomial Q.

    ``potential_coeffs`` are the coefficients (c_0, ..., c_d) of a scalar
    polynomial ``q(u) = sum c_k u^k`` applied per coordinate, so
    ``Q(x) = sum_i q(x_i)``.  Confinement requires even degree >= 2 with a
    positive leading coefficient.  ``sigma`` is a full-rank square matrix.
    """

    potential_coeffs: tuple
    sigma: np.ndarray
    name: str = "polynomial"

    def __post_init__(self):
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        sig.flags.writeable = False
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "potential_coeffs", tuple(float(c) for c in self.potential_coeffs))

    def validate(self) -> None:
        coeffs = np.asarray(self.potential_coeffs, dtype=float)
        if coeffs.size < 3:
            raise ParameterDomain("potential must have degree >= 2")
        degree = coeffs.size - 1
        while degree > 0 and coeffs[degree] == 0.0:
            degree -= 1
        if degree < 2 or degree % 2 != 0 or coeffs[degree] <= 0:
            raise ParameterDomain(
                "potential must have positive leading coefficient of even degree >= 2"
            )
        sig = self.sigma
        if sig.ndim != 2 or sig.shape[0] != sig.shape[1]:
            raise ParameterDomain("sigma must be square")
        if abs(np.linalg.det(sig)) < 1e-12:
            raise ParameterDomain("sigma must be full rank")

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    def grad_potential(self, x: np.ndarray) -> np.ndarray:
        dq = npoly.polyder(np.asarray(self.potential_coeffs, dtype=float))
        return npoly.polyval(x, dq)

    def stationary_density_unnormalized(self, u, noise_scale: float) -> np.ndarray:
        """One-coordinate density ``exp(-2 q(u) / s^2)`` up to normalization.

        Valid when sigma = s * I; used as a quadrature oracle for the
        stationary moments of separable potentials.
        """
        q = npoly.polyval(np.asarray(u, dtype=float), np.asarray(self.potential_coeffs))
        return np.exp(-2.0 * q / noise_scale**2)


def simulate_gradient_diffusion(
    params: GradientDiffusionParams,
    length: int,
    delta_fine: float,
    stream: RandomStreamSpec,
    burn_in: int | None = None,
) -> TrajectoryGrid:
    """Euler-Maruyama path of a confining gradient diffusion, after burn-in.

    Starts at the origin and discards ``burn_in`` steps (default: ten unit
    reversion times).  The drift step is checked against half the state
    scale before starting; a path that still blows up raises
    ``SimulationDiverged``.
    """
    params.validate()
    if length < 1:
        raise ParameterDomain(f"length must be >= 1, got {length}")
    if delta_fine <= 0 or not np.isfinite(delta_fine):
        raise ParameterDomain(f"delta_fine must be positive, got {delta_fine}")
    if burn_in is None:
        burn_in = int(math.ceil(10.0 / delta_fine))
    if burn_in < 0:
        raise ParameterDomain(f"burn_in must be >= 0, got {burn_in}")

    scale = 1.0
    drift_step = abs(float(params.grad_potential(np.array(scale)))) * delta_fine
    if drift_step > scale / 2.0:
        raise ParameterDomain(
            f"drift step {drift_step:.3g} at unit scale exceeds half the state scale; "
            "reduce delta_fine"
        )

    r = params.dim
    rng = stream.generator()
    sqdt = math.sqrt(delta_fine)
    total = burn_in + length
    out = np.empty((length, r))
    x = np.zeros(r)
    sig_t = params.sigma.T
    for start in range(0, total, _DIVERGENCE_CHECK_EVERY):
        stop = min(start + _DIVERGENCE_CHECK_EVERY, total)
        z = rng.standard_normal((stop - start, r))
        for i in range(start, stop):
            x = x - params.grad_potential(x) * delta_fine + sqdt * (z[i - start] @ sig_t)
            if i >= burn_in:
                out[i - burn_in] = x
        if not np.isfinite(x).all():
            raise SimulationDiverged(
                f"state became non-finite near step {stop} of {total}"
            )
    return TrajectoryGrid(out, delta_fine)


# ---------------------------------------------------------------------------
# Stochastic volatility (square-root variance)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HestonParams:
    """Price/variance pair: dV = reversion (level - V) dt + vol_of_vol sqrt(V) dW2,
    dR = drift dt + sqrt(V) dW1 with independent Brownian drivers.
    """

    reversion: float
    level: float
    vol_of_vol: float
    drift: float = 0.0

    def validate(self) -> None:
        if self.reversion <= 0 or self.level <= 0 or self.vol_of_vol <= 0:
            raise ParameterDomain("reversion, level and vol_of_vol must be > 0")
        if not np.isfinite([self.reversion, self.level, self.vol_of_vol, self.drift]).all():
            raise ParameterDomain("parameters must be finite")

    @property
    def stationary_mean(self) -> float:
        return self.level

    @property
    def stationary_variance(self) -> float:
        return self.vol_of_vol**2 * self.level / (2.0 * self.reversion)

    def variance_covariance(self, lag: float) -> float:
        """Stationary autocovariance of the variance process at lag >= 0."""
        if lag < 0:
            raise ParameterDomain(f"lag must be >= 0, got {lag}")
        return self.stationary_variance * math.exp(-self.reversion * lag)


def _heston_core(
    params: HestonParams,
    n_steps: int,
    dt: float,
    z_var: np.ndarray,
    z_price: np.ndarray,
    v0: np.ndarray,
):
    """Full-truncation Euler over pre-drawn normals; batched over columns."""
    sqdt = math.sqrt(dt)
    v_raw = np.array(v0, dtype=float)
    v_paths = np.empty_like(z_var)
    r_paths = np.empty_like(z_price)
    r = np.zeros_like(v_raw)
    for n in range(n_steps):
        v_plus = np.maximum(v_raw, 0.0)
        vol = np.sqrt(v_plus)
        r = r + params.drift * dt + vol * sqdt * z_price[n]
        v_raw = v_raw + params.reversion * (params.level - v_plus) * dt \
            + params.vol_of_vol * vol * sqdt * z_var[n]
        v_paths[n] = np.maximum(v_raw, 0.0)
        r_paths[n] = r
    if not (np.isfinite(v_raw).all() and np.isfinite(r).all()):
        raise SimulationDiverged("price or variance became non-finite")
    return r_paths, v_paths


def heston_initial_variance(
    params: HestonParams, rng: np.random.Generator, size: int | None = None
):
    """Draw V(0) from the stationary Gamma law of the square-root process."""
    shape = 2.0 * params.reversion * params.level / params.vol_of_vol**2
    scale = params.vol_of_vol**2 / (2.0 * params.reversion)
    return rng.gamma(shape, scale, size=size)


def simulate_heston(
    params: HestonParams,
    length: int,
    delta_fine: float,
    stream: RandomStreamSpec,
    v0_mode: str | float = "stationary",
) -> tuple[TrajectoryGrid, TrajectoryGrid]:
    """Simulate (returns path, variance path) with full-truncation Euler.

    The variance driver uses the stream's process-noise role and the price
    driver the auxiliary role, so hidden and observable randomness stay
    independent within one replication.  The stored variance is the
    truncated non-negative one.  ``v0_mode`` is ``"stationary"`` or a fixed
    non-negative starting value.
    """
    params.validate()
    if length < 1:
        raise ParameterDomain(f"length must be >= 1, got {length}")
    if delta_fine <= 0:
        raise ParameterDomain(f"delta_fine must be positive, got {delta_fine}")
    rng_var = stream.role(StreamRole.PROCESS_NOISE).generator()
    rng_price = stream.role(StreamRole.AUXILIARY_NOISE).generator()
    if isinstance(v0_mode, str):
        if v0_mode != "stationary":
            raise ParameterDomain(f"unknown v0_mode {v0_mode!r}")
        v0 = float(heston_initial_variance(params, rng_var))
    else:
        v0 = float(v0_mode)
        if v0 < 0:
            raise ParameterDomain(f"fixed v0 must be >= 0, got {v0}")
    z_var = rng_var.standard_normal((length, 1))
    z_price = rng_price.standard_normal((length, 1))
    r_paths, v_paths = _heston_core(params, length, delta_fine, z_var, z_price, np.array([v0]))
    return (
        TrajectoryGrid(r_paths[:, 0], delta_fine),
        TrajectoryGrid(v_paths[:, 0], delta_fine),
    )


# ---------------------------------------------------------------------------
# Observable constructors
# ---------------------------------------------------------------------------


def multiplicative_perturbation_observable(x: TrajectoryGrid, rho: float) -> TrajectoryGrid:
    """Proxy ``Y = (1 + rho) X``; its L4 distance to X is exactly rho * ||X||_4."""
    if rho < 0:
        raise ParameterDomain(f"rho must be >= 0, got {rho}")
    return TrajectoryGrid((1.0 + rho) * x.samples, x.delta)


def smoothing_observable(x: TrajectoryGrid, eps: float) -> TrajectoryGrid:
    """Trailing moving average ``Y_t = (1/eps) * integral of X over [t - eps, t]``.

    The window must be an exact multiple of the grid step; the integral is
    the trapezoid rule over the window's ``eps / delta`` sub-steps.  Output
    row ``i`` corresponds to source row ``m + i`` (the first ``m`` rows have
    no full window), on the same step.
    """
    if eps <= 0:
        raise ParameterDomain(f"eps must be > 0, got {eps}")
    ratio = eps / x.delta
    m = int(round(ratio))
    if m < 1 or not math.isclose(ratio, m, rel_tol=1e-9, abs_tol=0.0):
        raise SchemeGridMismatch(
            f"window {eps} is not a positive multiple of the grid step {x.delta}"
        )
    if x.n_samples < m + 1:
        raise InsufficientData(
            f"need at least {m + 1} samples for a window of {m} steps, got {x.n_samples}"
        )
    w = np.full(m + 1, x.delta / eps)
    w[0] *= 0.5
    w[-1] *= 0.5
    windows = np.lib.stride_tricks.sliding_window_view(x.samples, m + 1, axis=0)
    return TrajectoryGrid(windows @ w, x.delta)


def realized_volatility_observable(
    returns: TrajectoryGrid, eps: float, window: int
) -> TrajectoryGrid:
    """Realized variance over the trailing ``window`` return increments.

    ``Y`` at time ``t`` is ``(1/(window*eps)) * sum of squared increments``
    of the scalar returns path over ``[t - window*eps, t]``, using only
    increments inside the grid.  Output row ``i`` corresponds to source row
    ``window + i``.  The returns grid step must equal ``eps``.
    """
    if window < 1:
        raise ParameterDomain(f"window must be >= 1, got {window}")
    if returns.dim != 1:
        raise ParameterDomain(f"returns must be scalar, got dim {returns.dim}")
    if not math.isclose(returns.delta, eps, rel_tol=1e-9, abs_tol=0.0):
        raise SchemeGridMismatch(
            f"returns grid step {returns.delta} does not match eps {eps}"
        )
    if returns.n_samples < window + 1:
        raise InsufficientData(
            f"need at least {window + 1} return samples, got {returns.n_samples}"
        )
    sq = np.diff(returns.samples[:, 0]) ** 2
    csum = np.concatenate(([0.0], np.cumsum(sq)))
    rolling = csum[window:] - csum[:-window]
    return TrajectoryGrid(rolling / (window * eps), eps)


def default_rv_window(eps: float) -> int:
    """Default number of return increments per window, ``ceil(eps**-0.5)``."""
    if eps <= 0:
        raise ParameterDomain(f"eps must be > 0, got {eps}")
    return int(math.ceil(eps**-0.5))


# ---------------------------------------------------------------------------
# Slow-fast systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlowFastEntry:
    """Catalog entry: a two-scale pair and its averaged limit.

    The fast coordinate relaxes like an OU process with unit stationary
    variance (fast drift -y, fast diffusion sqrt(2)), so the averaged drift
    is the slow drift integrated against a standard normal in y.
    """

    name: str
    description: str
    slow_drift: Callable[[float, float], float]
    slow_diffusion: float
    averaged_drift: Callable[[float], float]
    averaged_diffusion: float
    reduced: OUParams


def _catalog() -> dict:
    entries = [
        SlowFastEntry(
            name="linear_coupling",
            description="slow drift -x + y; averages to the unit OU",
            slow_drift=lambda x, y: -x + y,
            slow_diffusion=1.0,
            averaged_drift=lambda x: -x,
            averaged_diffusion=1.0,
            reduced=OUParams(mean=0.0, reversion=1.0, noise=1.0),
        ),
        SlowFastEntry(
            name="quadratic_coupling",
            description="slow drift -x + y^2; averages to OU around 1",
            slow_drift=lambda x, y: -x + y * y,
            slow_diffusion=1.0,
            averaged_drift=lambda x: 1.0 - x,
            averaged_diffusion=1.0,
            reduced=OUParams(mean=1.0, reversion=1.0, noise=1.0),
        ),
    ]
    return {e.name: e for e in entries}


SLOW_FAST_CATALOG = _catalog()


@dataclass(frozen=True)
class SlowFastParams:
    """Two-scale system selection: catalog entry plus scale separation eps."""

    entry: str
    scale: float

    def validate(self) -> None:
        if self.entry not in SLOW_FAST_CATALOG:
            raise ParameterDomain(
                f"unknown entry {self.entry!r}; choose from {sorted(SLOW_FAST_CATALOG)}"
            )
        if not (0 < self.scale):
            raise ParameterDomain(f"scale must be > 0, got {self.scale}")

    @property
    def catalog_entry(self) -> SlowFastEntry:
        return SLOW_FAST_CATALOG[self.entry]


def simulate_slow_fast(
    params: SlowFastParams,
    length: int,
    delta_fine: float,
    stream: RandomStreamSpec,
) -> tuple[TrajectoryGrid, TrajectoryGrid]:
    """Simulate the slow coordinate and its averaged reference path.

    Both equations are driven by the same slow Brownian increments
    (process-noise role; the fast coordinate uses the auxiliary role), so
    the pair is coupled pathwise and their distance reflects the scale
    separation rather than independent noise.  Requires
    ``delta_fine <= scale / 10`` to resolve the fast motion.
    """
    params.validate()
    if length < 1:
        raise ParameterDomain(f"length must be >= 1, got {length}")
    if delta_fine <= 0:
        raise ParameterDomain(f"delta_fine must be positive, got {delta_fine}")
    if delta_fine > params.scale / 10.0 * (1.0 + 1e-12):
        raise ParameterDomain(
            f"delta_fine {delta_fine} too coarse for scale {params.scale}; "
            "need delta_fine <= scale / 10"
        )
    entry = params.catalog_entry
    eps = params.scale
    rng_slow = stream.role(StreamRole.PROCESS_NOISE).generator()
    rng_fast = stream.role(StreamRole.AUXILIARY_NOISE).generator()

    z_init = rng_slow.standard_normal()
    x = entry.reduced.mean + entry.reduced.stationary_std * z_init
    x_avg = x  # same start: coupled comparison
    y = float(rng_fast.standard_normal())  # fast stationary marginal is N(0, 1)

    z_slow = rng_slow.standard_normal(length)
    z_fast = rng_fast.standard_normal(length)
    sqdt = math.sqrt(delta_fine)
    fast_diff = math.sqrt(2.0 / eps)
    out_x = np.empty(length)
    out_avg = np.empty(length)
    for n in range(length):
        dw = sqdt * z_slow[n]
        x = x + entry.slow_drift(x, y) * delta_fine + entry.slow_diffusion * dw
        x_avg = x_avg + entry.averaged_drift(x_avg) * delta_fine + entry.averaged_diffusion * dw
        y = y - (y / eps) * delta_fine + fast_diff * sqdt * z_fast[n]
        out_x[n] = x
        out_avg[n] = x_avg
    if not (np.isfinite(out_x[-1]) and np.isfinite(out_avg[-1]) and np.isfinite(y)):
        raise SimulationDiverged("slow-fast state became non-finite")
    return TrajectoryGrid(out_x, delta_fine), TrajectoryGrid(out_avg, delta_fine)
