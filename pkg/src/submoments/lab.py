"""Monte Carlo experiments measuring estimator convergence against theory.

The generic engine sweeps a grid of proxy levels (or sample budgets), runs
paired replications of the hidden process and its observable, and records
covariance and mean estimates for both sequences.  Errors against the
known stationary moments then yield empirical convergence rates, gap
checks against the perturbation bound, and bound-containment fractions.

Two pipelines with their own flow live here as well: an end-to-end
parameter recovery study for the scalar mean-reverting model, and a
realized-variance study for the square-root volatility model where the
proxy quality is itself estimated from a pilot path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import (
    MomentsOutsideModelRange,
    ParameterDomain,
    ResourceLimit,
    SchemeGridMismatch,
)
from .estimators import empirical_mean, lag_index, lagged_covariance
from .grids import (
    RandomStreamSpec,
    StreamRole,
    SubsamplingScheme,
    TrajectoryGrid,
    resolve_stride,
    subsample_sequence,
)
from .invert import (
    MomentVector,
    default_ou_descriptors,
    extract_moment_vector,
    invert_cir,
    invert_ou,
)
from .models import (
    HestonParams,
    OUParams,
    default_rv_window,
    heston_initial_variance,
    multiplicative_perturbation_observable,
    ou_true_covariance,
    realized_volatility_observable,
    simulate_ou,
    smoothing_observable,
    _heston_core,
)
from .schemes import (
    BoundInputs,
    error_bound_observable,
    error_bound_unobservable,
    scheme_from_n,
    scheme_from_rho,
)

_OBSERVABLES = ("identity", "multiplicative", "smoothing")
_RHO_KINDS = ("identity", "sqrt", "table")
_FAMILIES = ("from_rho", "from_n", "custom")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One convergence sweep for the scalar mean-reverting model.

    The sweep axis is either ``epsilon_grid`` (proxy level, strictly
    decreasing, at least three entries when rates are to be fitted) or
    ``n_grid`` (sample budgets) for the ``from_n`` family.  ``rho_kind``
    maps epsilon to the proxy error level: ``identity`` (rho = eps),
    ``sqrt`` (rho = c_rho * sqrt(eps)) or a ``table`` of exact pairs.
    ``stride_resolution`` is the number of fine simulation steps per coarse
    step; pointwise observables with an exact-transition simulator need
    only 1.
    """

    model: OUParams
    observable: str = "identity"
    rho_kind: str = "identity"
    c_rho: float = 1.0
    rho_table: tuple = ()
    epsilon_grid: tuple = ()
    n_grid: tuple = ()
    scheme_family: str = "from_rho"
    c_n: float = 1.0
    c_delta: float = 1.0
    custom_schemes: tuple = ()
    lags: tuple = (0.0,)
    horizon_a: float | None = None
    replications: int = 100
    master_seed: int = 0
    stride_resolution: int = 1
    workers: int = 1
    memory_cap_bytes: int = 2 * 1024**3

    def validate(self) -> None:
        self.model.validate()
        if self.observable not in _OBSERVABLES:
            raise ParameterDomain(f"unknown observable {self.observable!r}")
        if self.rho_kind not in _RHO_KINDS:
            raise ParameterDomain(f"unknown rho kind {self.rho_kind!r}")
        if self.scheme_family not in _FAMILIES:
            raise ParameterDomain(f"unknown scheme family {self.scheme_family!r}")
        if self.replications < 30:
            raise ParameterDomain(
                f"need at least 30 replications for stable error estimates, "
                f"got {self.replications}"
            )
        if self.stride_resolution < 1:
            raise ParameterDomain("stride_resolution must be >= 1")
        if self.workers < 1:
            raise ParameterDomain("workers must be >= 1")
        if self.scheme_family == "from_n":
            if len(self.n_grid) < 1:
                raise ParameterDomain("from_n family needs n_grid")
        else:
            eps = np.asarray(self.epsilon_grid, dtype=float)
            if eps.size < 3:
                raise ParameterDomain("epsilon_grid needs at least three levels")
            if (eps <= 0).any() or not (np.diff(eps) < 0).all():
                raise ParameterDomain("epsilon_grid must be positive, strictly decreasing")
        if self.scheme_family == "custom" and len(self.custom_schemes) != len(
            self.epsilon_grid
        ):
            raise ParameterDomain("custom family needs one scheme per epsilon")
        if not self.lags:
            raise ParameterDomain("need at least one lag")
        if any(u < 0 for u in self.lags):
            raise ParameterDomain("lags must be >= 0")

    def rho_of(self, eps: float) -> float:
        if self.rho_kind == "identity":
            return float(eps)
        if self.rho_kind == "sqrt":
            return self.c_rho * math.sqrt(eps)
        table = dict(self.rho_table)
        if eps not in table:
            raise ParameterDomain(f"epsilon {eps} missing from rho table")
        return float(table[eps])

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class SweepPoint:
    label: float
    rho: float
    eps: float
    scheme: SubsamplingScheme  # resolved
    fine_delta: float
    offset_rows: int  # observable rows discarded at the start (window warm-up)
    kappas: tuple
    lags_used: tuple


def _plan_sweep(config: ExperimentConfig) -> list[SweepPoint]:
    points = []
    if config.scheme_family == "from_n":
        raw = [(float(n), 0.0, 0.0, scheme_from_n(int(n), config.c_delta)) for n in config.n_grid]
    elif config.scheme_family == "from_rho":
        raw = []
        for eps in config.epsilon_grid:
            rho = config.rho_of(eps)
            rec = scheme_from_rho(rho, config.c_n, config.c_delta)
            raw.append((float(eps), rho, float(eps), rec.scheme))
    else:
        raw = [
            (float(eps), config.rho_of(eps), float(eps), scheme)
            for eps, scheme in zip(config.epsilon_grid, config.custom_schemes)
        ]
    for label, rho, eps, scheme in raw:
        fine = scheme.big_delta / config.stride_resolution
        resolved = resolve_stride(scheme, fine)
        kappas = tuple(lag_index(u, resolved.big_delta) for u in config.lags)
        lags_used = tuple(k * resolved.big_delta for k in kappas)
        offset = 0
        if config.observable == "smoothing":
            ratio = eps / fine
            offset = int(round(ratio))
            if offset < 1 or not math.isclose(ratio, offset, rel_tol=1e-9):
                raise SchemeGridMismatch(
                    f"smoothing window {eps} is not a multiple of the fine step {fine}"
                )
        points.append(
            SweepPoint(
                label=label,
                rho=rho,
                eps=eps,
                scheme=resolved,
                fine_delta=fine,
                offset_rows=offset,
                kappas=kappas,
                lags_used=lags_used,
            )
        )
    return points


def _fine_length(point: SweepPoint) -> int:
    kmax = max(point.kappas)
    return point.offset_rows + (point.scheme.n_obs + kmax) * point.scheme.stride


def _check_memory(config: ExperimentConfig, points) -> None:
    worst = max(_fine_length(p) for p in points)
    # fine path, observable copy, centered temporaries, per-lag product
    per_path = worst * 8 * 4
    need = per_path * max(1, config.workers)
    if need > config.memory_cap_bytes:
        raise ResourceLimit(
            f"run needs about {need / 1e9:.2f} GB of workspace, cap is "
            f"{config.memory_cap_bytes / 1e9:.2f} GB"
        )


# ---------------------------------------------------------------------------
# Ensemble
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    """Raw per-replication estimates of one sweep."""

    grid_kind: str  # "epsilon" | "n_obs"
    labels: np.ndarray  # (G,)
    rhos: np.ndarray  # (G,)
    n_obs: np.ndarray  # (G,) int
    strides: np.ndarray  # (G,) int
    big_deltas: np.ndarray  # (G,)
    lags: np.ndarray  # (L,)
    lags_used: np.ndarray  # (G, L)
    kappas: np.ndarray  # (G, L) int
    khat_y: np.ndarray  # (G, M, L, r, r)
    khat_x: np.ndarray  # (G, M, L, r, r)
    mean_y: np.ndarray  # (G, M, r)
    mean_x: np.ndarray  # (G, M, r)
    config_hash: str = ""

    @property
    def spans(self) -> np.ndarray:
        return self.n_obs * self.big_deltas

    @property
    def replications(self) -> int:
        return self.khat_x.shape[1]


def save_ensemble(ensemble: Ensemble, path) -> None:
    """Persist the raw records plus the config hash they came from."""
    np.savez_compressed(
        path,
        grid_kind=np.array(ensemble.grid_kind),
        labels=ensemble.labels,
        rhos=ensemble.rhos,
        n_obs=ensemble.n_obs,
        strides=ensemble.strides,
        big_deltas=ensemble.big_deltas,
        lags=ensemble.lags,
        lags_used=ensemble.lags_used,
        kappas=ensemble.kappas,
        khat_y=ensemble.khat_y,
        khat_x=ensemble.khat_x,
        mean_y=ensemble.mean_y,
        mean_x=ensemble.mean_x,
        config_hash=np.array(ensemble.config_hash),
    )


def load_ensemble(path) -> Ensemble:
    with np.load(path) as data:
        return Ensemble(
            grid_kind=str(data["grid_kind"]),
            labels=data["labels"],
            rhos=data["rhos"],
            n_obs=data["n_obs"],
            strides=data["strides"],
            big_deltas=data["big_deltas"],
            lags=data["lags"],
            lags_used=data["lags_used"],
            kappas=data["kappas"],
            khat_y=data["khat_y"],
            khat_x=data["khat_x"],
            mean_y=data["mean_y"],
            mean_x=data["mean_x"],
            config_hash=str(data["config_hash"]),
        )


def _one_replication(config: ExperimentConfig, point: SweepPoint, rep: int):
    """Estimates for one (grid point, replication) pair; pure in its inputs."""
    stream = RandomStreamSpec(config.master_seed, rep, StreamRole.PROCESS_NOISE)
    fine_len = _fine_length(point)
    x_grid = simulate_ou(config.model, fine_len, point.fine_delta, stream)
    if config.observable == "identity":
        y_grid = x_grid
    elif config.observable == "multiplicative":
        y_grid = multiplicative_perturbation_observable(x_grid, point.rho)
    else:
        y_grid = smoothing_observable(x_grid, point.eps)
    # align the hidden path with the observable's warm-up offset
    x_aligned = (
        x_grid
        if point.offset_rows == 0
        else TrajectoryGrid(x_grid.samples[point.offset_rows :], x_grid.delta)
    )
    kmax = max(point.kappas)
    y_seq = subsample_sequence(y_grid, point.scheme, n_extra=kmax)
    x_seq = (
        y_seq
        if y_grid is x_aligned
        else subsample_sequence(x_aligned, point.scheme, n_extra=kmax)
    )

    n_lags = len(point.kappas)
    r = x_seq.shape[1]
    ky = np.empty((n_lags, r, r))
    kx = np.empty((n_lags, r, r))
    cache_y: dict[int, np.ndarray] = {}
    cache_x: dict[int, np.ndarray] = {}
    for li, kappa in enumerate(point.kappas):
        if kappa not in cache_x:
            cache_x[kappa] = lagged_covariance(
                x_seq, point.scheme.n_obs, kappa, point.scheme.big_delta
            ).matrix
            cache_y[kappa] = (
                cache_x[kappa]
                if y_seq is x_seq
                else lagged_covariance(
                    y_seq, point.scheme.n_obs, kappa, point.scheme.big_delta
                ).matrix
            )
        kx[li] = cache_x[kappa]
        ky[li] = cache_y[kappa]
    my = empirical_mean(y_seq[: point.scheme.n_obs]).vector
    mx = (
        my
        if y_seq is x_seq
        else empirical_mean(x_seq[: point.scheme.n_obs]).vector
    )
    return ky, kx, my, np.array(mx)


def _replication_block(args):
    config, point, reps = args
    return [_one_replication(config, point, rep) for rep in reps]


def run_replications(config: ExperimentConfig) -> Ensemble:
    """Run the full sweep and collect paired estimates.

    Replication ``m`` draws only from streams keyed by ``m``, so results do
    not depend on execution order and re-running with the same master seed
    reproduces the ensemble bit for bit.
    """
    config.validate()
    points = _plan_sweep(config)
    _check_memory(config, points)
    n_points, n_reps, n_lags = len(points), config.replications, len(config.lags)
    r = 1  # scalar hidden model
    ens = Ensemble(
        grid_kind="n_obs" if config.scheme_family == "from_n" else "epsilon",
        labels=np.array([p.label for p in points]),
        rhos=np.array([p.rho for p in points]),
        n_obs=np.array([p.scheme.n_obs for p in points], dtype=int),
        strides=np.array([p.scheme.stride for p in points], dtype=int),
        big_deltas=np.array([p.scheme.big_delta for p in points]),
        lags=np.array(config.lags, dtype=float),
        lags_used=np.array([p.lags_used for p in points]),
        kappas=np.array([p.kappas for p in points], dtype=int),
        khat_y=np.empty((n_points, n_reps, n_lags, r, r)),
        khat_x=np.empty((n_points, n_reps, n_lags, r, r)),
        mean_y=np.empty((n_points, n_reps, r)),
        mean_x=np.empty((n_points, n_reps, r)),
        config_hash=config.config_hash(),
    )
    for gi, point in enumerate(points):
        if config.workers > 1:
            chunk = max(1, math.ceil(n_reps / (config.workers * 4)))
            blocks = [
                (config, point, range(start, min(start + chunk, n_reps)))
                for start in range(0, n_reps, chunk)
            ]
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                results = []
                for block in pool.map(_replication_block, blocks):
                    results.extend(block)
        else:
            results = [_one_replication(config, point, rep) for rep in range(n_reps)]
        for rep, (ky, kx, my, mx) in enumerate(results):
            ens.khat_y[gi, rep] = ky
            ens.khat_x[gi, rep] = kx
            ens.mean_y[gi, rep] = my
            ens.mean_x[gi, rep] = mx
    return ens


# ---------------------------------------------------------------------------
# Error metrics and rate fits
# ---------------------------------------------------------------------------


def empirical_lp_error(estimates: np.ndarray, target, p: float) -> np.ndarray:
    """Monte Carlo L^p error of an estimate array against its target.

    ``estimates`` has shape (G, M, ...); the trailing axes are reduced with
    the entrywise sup norm, then the replication axis with the L^p mean
    ``(average of norm^p)**(1/p)``.  Returns shape (G,) or (G, L) depending
    on whether a lag axis precedes the matrix axes.
    """
    if p <= 0:
        raise ParameterDomain(f"p must be > 0, got {p}")
    est = np.asarray(estimates, dtype=float)
    if est.ndim < 3:
        raise ParameterDomain("estimates must have shape (G, M, ...)")
    diff = np.abs(est - np.asarray(target, dtype=float))
    # sup norm over every axis after (G, M) except an optional lag axis
    if est.ndim > 3:
        sup = diff.reshape(diff.shape[0], diff.shape[1], diff.shape[2], -1).max(axis=3)
    else:
        sup = diff
    return (np.mean(sup**p, axis=1)) ** (1.0 / p)


def ensemble_cov_errors(
    ensemble: Ensemble, oracle: np.ndarray, p: float = 2.0, which: str = "x"
) -> np.ndarray:
    """(G, L) L^p covariance errors against an oracle of shape (L, r, r)."""
    est = ensemble.khat_x if which == "x" else ensemble.khat_y
    return empirical_lp_error(est, oracle[None, None], p)


def ensemble_mean_errors(
    ensemble: Ensemble, true_mean, p: float = 2.0, which: str = "x"
) -> np.ndarray:
    """(G,) L^p errors of the empirical mean against the true mean."""
    est = ensemble.mean_y if which == "y" else ensemble.mean_x
    target = np.broadcast_to(np.asarray(true_mean, dtype=float), est.shape)
    diff = np.abs(est - target).max(axis=2)
    return (np.mean(diff**p, axis=1)) ** (1.0 / p)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def fit_rate_slope(x, y) -> RateFit:
    """Least-squares slope of log(y) against log(x).

    Inputs must be positive; with two points the fit is exact and the
    r-squared is reported as 1.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ParameterDomain("need matching 1-d arrays with at least two points")
    if (x <= 0).any() or (y <= 0).any():
        raise ParameterDomain("rate fits need positive values on both axes")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = slope * lx + intercept
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(slope=float(slope), intercept=float(intercept), r_squared=r2)


@dataclass(frozen=True)
class GapCheck:
    """Measured estimator gap between proxy and hidden sequences at one level."""

    label: float
    rho: float
    nu: float
    gap_by_lag: np.ndarray  # (L,) Monte Carlo L2 gaps
    gap: float  # max over lags
    bound: float  # 4 * nu * rho
    cov_ok: bool
    mean_gap_l4: float
    mean_bound: float
    mean_ok: bool


def perturbation_gap_check(ensemble: Ensemble, nu_of_rho) -> list[GapCheck]:
    """Compare measured estimator gaps against the proxy-error bound.

    ``nu_of_rho`` maps each grid point's rho to the fourth-moment constant
    of the pair of sequences.  The covariance gap must stay below
    ``4 * nu * rho`` and the mean gap below ``nu * rho``.
    """
    gaps = empirical_lp_error(ensemble.khat_y - ensemble.khat_x, 0.0, 2.0)
    out = []
    for gi in range(ensemble.labels.size):
        rho = float(ensemble.rhos[gi])
        nu = float(nu_of_rho(rho))
        mean_diff = np.abs(ensemble.mean_y[gi] - ensemble.mean_x[gi]).max(axis=1)
        mean_gap = float(np.mean(mean_diff**4) ** 0.25)
        bound = 4.0 * nu * rho
        mean_bound = nu * rho
        gap = float(gaps[gi].max())
        out.append(
            GapCheck(
                label=float(ensemble.labels[gi]),
                rho=rho,
                nu=nu,
                gap_by_lag=gaps[gi],
                gap=gap,
                bound=bound,
                cov_ok=bool(gap <= bound),
                mean_gap_l4=mean_gap,
                mean_bound=mean_bound,
                mean_ok=bool(mean_gap <= mean_bound),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Decorrelation probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeTable:
    """Empirical decorrelation of moment words along one long path."""

    gaps: np.ndarray  # (T,) gaps actually used (grid multiples)
    values: np.ndarray  # (T,) max |cov| over the word design
    noise: np.ndarray  # (T,) block standard errors for the max pair
    fitted_rate: float | None
    fitted_level: float | None

    def is_nonincreasing(self, tol_multiple: float = 3.0) -> bool:
        """Monotone within noise: each rise must stay inside the error bars."""
        slack = tol_multiple * (self.noise[:-1] + self.noise[1:])
        return bool(np.all(np.diff(self.values) <= slack))


def decorrelation_probe(
    grid: TrajectoryGrid,
    gaps,
    pair_offset: float = 0.5,
    n_blocks: int = 20,
) -> ProbeTable:
    """Estimate the decorrelation envelope of first and second moment words.

    The word design is ``{x_t, x_t * x_{t+h}}`` with ``h = pair_offset``
    (rounded to the grid).  For each gap the covariance of every word pair
    is estimated by a long-path average; the table value is the largest
    magnitude and its block-resampled standard error is the noise scale.
    An exponential rate is fitted over the gaps that clear three noise
    standard errors.
    """
    x = grid.samples[:, 0]
    delta = grid.delta
    h = max(1, int(round(pair_offset / delta)))
    gap_steps = [max(1, int(round(float(g) / delta))) for g in gaps]
    words = [x[:-h], x[:-h] * x[h:]]
    values, noises, used = [], [], []
    for k in gap_steps:
        best, best_se = 0.0, 0.0
        length = x.size - k - 2 * h
        if length < 10 * n_blocks:
            raise ParameterDomain(f"path too short to probe gap {k * delta:g}")
        for a in words:
            for b in words:
                av = a[:length]
                bv = b[k : k + length]
                prod = (av - av.mean()) * (bv - bv.mean())
                cov = abs(float(prod.mean()))
                blocks = np.array_split(prod, n_blocks)
                bm = np.array([blk.mean() for blk in blocks])
                se = float(bm.std(ddof=1) / math.sqrt(n_blocks))
                if cov > best:
                    best, best_se = cov, se
        values.append(best)
        noises.append(best_se)
        used.append(k * delta)
    values = np.array(values)
    noises = np.array(noises)
    used = np.array(used)
    clear = values > 3.0 * noises
    rate = level = None
    if clear.sum() >= 2:
        slope, intercept = np.polyfit(used[clear], np.log(values[clear]), 1)
        rate, level = -float(slope), float(math.exp(intercept))
    return ProbeTable(
        gaps=used, values=values, noise=noises, fitted_rate=rate, fitted_level=level
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    meta: dict
    rows: list
    mean_rows: list
    slopes: dict
    bound_rows: list
    bound_fractions: dict

    def to_json_dict(self) -> dict:
        return {
            "meta": self.meta,
            "rows": self.rows,
            "mean_rows": self.mean_rows,
            "slopes": self.slopes,
            "bound_rows": self.bound_rows,
            "bound_fractions": self.bound_fractions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_csv(self, path) -> None:
        cols = [
            "label", "rho", "n_obs", "big_delta", "span", "lag", "lag_used",
            "err_x_l2", "err_y_l2", "gap_l2",
        ]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")


def build_report(
    config: ExperimentConfig,
    ensemble: Ensemble,
    inputs: BoundInputs | None = None,
) -> ConvergenceReport:
    """Errors, fitted rates, and bound comparisons for one sweep.

    The oracle is the model's exact stationary covariance at each requested
    lag and its mean.  When ``inputs`` is given, theoretical bounds are
    evaluated per grid point and the fraction of (point, lag) combinations
    inside the bound is reported for both sequences.
    """
    model = config.model
    lags = ensemble.lags
    oracle = np.array([[[ou_true_covariance(model, u)]] for u in lags])
    err_x = ensemble_cov_errors(ensemble, oracle, p=2.0, which="x")
    err_y = ensemble_cov_errors(ensemble, oracle, p=2.0, which="y")
    gap = empirical_lp_error(ensemble.khat_y - ensemble.khat_x, 0.0, 2.0)
    mean_l2_x = ensemble_mean_errors(ensemble, model.mean, p=2.0, which="x")
    mean_l4_x = ensemble_mean_errors(ensemble, model.mean, p=4.0, which="x")
    mean_l2_y = ensemble_mean_errors(ensemble, model.mean, p=2.0, which="y")

    rows = []
    for gi in range(ensemble.labels.size):
        for li, u in enumerate(lags):
            rows.append(
                {
                    "label": float(ensemble.labels[gi]),
                    "rho": float(ensemble.rhos[gi]),
                    "n_obs": int(ensemble.n_obs[gi]),
                    "big_delta": float(ensemble.big_deltas[gi]),
                    "span": float(ensemble.spans[gi]),
                    "lag": float(u),
                    "lag_used": float(ensemble.lags_used[gi, li]),
                    "err_x_l2": float(err_x[gi, li]),
                    "err_y_l2": float(err_y[gi, li]),
                    "gap_l2": float(gap[gi, li]),
                }
            )
    mean_rows = [
        {
            "label": float(ensemble.labels[gi]),
            "span": float(ensemble.spans[gi]),
            "mean_err_l2_x": float(mean_l2_x[gi]),
            "mean_err_l4_x": float(mean_l4_x[gi]),
            "mean_err_l2_y": float(mean_l2_y[gi]),
        }
        for gi in range(ensemble.labels.size)
    ]

    slopes: dict = {}
    if ensemble.labels.size >= 2:
        axis = ensemble.n_obs.astype(float) if ensemble.grid_kind == "n_obs" else None
        for li, u in enumerate(lags):
            key = f"lag_{u:g}"
            if axis is not None:
                slopes[f"err_x_vs_n/{key}"] = asdict(fit_rate_slope(axis, err_x[:, li]))
            if ensemble.grid_kind == "epsilon" and (ensemble.rhos > 0).all():
                slopes[f"err_y_vs_rho/{key}"] = asdict(
                    fit_rate_slope(ensemble.rhos, err_y[:, li])
                )
                if (gap[:, li] > 0).all():
                    slopes[f"gap_vs_rho/{key}"] = asdict(
                        fit_rate_slope(ensemble.rhos, gap[:, li])
                    )
        spans = ensemble.spans
        if np.unique(spans).size >= 2:
            slopes["mean_l2_vs_span"] = asdict(fit_rate_slope(spans, mean_l2_x))
            slopes["mean_l4_vs_span"] = asdict(fit_rate_slope(spans, mean_l4_x))

    bound_rows: list = []
    fractions: dict = {}
    if inputs is not None:
        inside_x = 0
        inside_y = 0
        for gi in range(ensemble.labels.size):
            scheme = SubsamplingScheme(
                n_obs=int(ensemble.n_obs[gi]),
                big_delta=float(ensemble.big_deltas[gi]),
                stride=int(ensemble.strides[gi]),
            )
            bx = error_bound_unobservable(inputs, scheme)
            rho = float(ensemble.rhos[gi])
            by = error_bound_observable(inputs, scheme, rho)
            bound_rows.append(
                {
                    "label": float(ensemble.labels[gi]),
                    "bound_x": bx,
                    "bound_y": by,
                    "worst_err_x": float(err_x[gi].max()),
                    "worst_err_y": float(err_y[gi].max()),
                }
            )
            inside_x += int(np.sum(err_x[gi] <= bx))
            inside_y += int(np.sum(err_y[gi] <= by))
        total = ensemble.labels.size * lags.size
        fractions = {
            "contained_x": inside_x / total,
            "contained_y": inside_y / total,
        }

    meta = {
        "config_hash": ensemble.config_hash,
        "grid_kind": ensemble.grid_kind,
        "replications": int(ensemble.replications),
        "observable": config.observable,
        "model": asdict(model),
    }
    return ConvergenceReport(
        meta=meta,
        rows=rows,
        mean_rows=mean_rows,
        slopes=slopes,
        bound_rows=bound_rows,
        bound_fractions=fractions,
    )


# ---------------------------------------------------------------------------
# End-to-end parameter recovery (scalar mean-reverting model)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EndToEndConfig:
    """Recover (mean, reversion, noise) through the full pipeline.

    The proxy is a multiplicative distortion at level ``rho``; the scheme
    follows the proxy-quality rule with constants ``c_n`` and ``c_delta``.
    """

    model: OUParams
    rho: float = 0.05
    c_n: float = 12.0
    c_delta: float = 1.0
    u1: float = 1.0
    replications: int = 200
    master_seed: int = 7
    tolerance: float = 0.10

    def validate(self) -> None:
        self.model.validate()
        if self.model.mean == 0 or self.model.noise == 0:
            raise ParameterDomain(
                "relative errors need nonzero true mean and noise"
            )
        if not (0 < self.rho < 1):
            raise ParameterDomain(f"rho must lie in (0, 1), got {self.rho}")
        if self.u1 <= 0:
            raise ParameterDomain("u1 must be > 0")
        if self.replications < 30:
            raise ParameterDomain("need at least 30 replications")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class EndToEndReport:
    names: tuple
    truth: np.ndarray
    rel_errors: np.ndarray  # (M, 3)
    fraction_within: dict
    rms_rel: dict
    tolerance: float
    scheme: SubsamplingScheme
    config_hash: str

    def passed(self, min_fraction: float = 0.9) -> bool:
        return all(f >= min_fraction for f in self.fraction_within.values())

    def to_json_dict(self) -> dict:
        return {
            "truth": {n: float(v) for n, v in zip(self.names, self.truth)},
            "fraction_within": self.fraction_within,
            "rms_rel": self.rms_rel,
            "tolerance": self.tolerance,
            "n_obs": self.scheme.n_obs,
            "big_delta": self.scheme.big_delta,
            "replications": int(self.rel_errors.shape[0]),
            "config_hash": self.config_hash,
        }


def run_endtoend_ou(config: EndToEndConfig) -> EndToEndReport:
    """Simulate, distort, sub-sample, estimate moments, invert; per replication.

    The inversion uses the lag actually representable on the coarse grid,
    so grid rounding does not bias the reversion estimate.
    """
    config.validate()
    rec = scheme_from_rho(config.rho, config.c_n, config.c_delta)
    scheme = resolve_stride(rec.scheme, rec.scheme.big_delta)  # coarse = fine
    kappa1 = lag_index(config.u1, scheme.big_delta)
    if kappa1 < 1:
        raise ParameterDomain(
            f"u1 {config.u1} rounds to lag zero on big_delta {scheme.big_delta}"
        )
    lag_used = kappa1 * scheme.big_delta
    fine_len = scheme.n_obs + kappa1
    truth = np.array([config.model.mean, config.model.reversion, config.model.noise])
    rel = np.empty((config.replications, 3))
    descriptors = default_ou_descriptors(lag_used)
    for rep in range(config.replications):
        stream = RandomStreamSpec(config.master_seed, rep, StreamRole.PROCESS_NOISE)
        x = simulate_ou(config.model, fine_len, scheme.big_delta, stream)
        y = multiplicative_perturbation_observable(x, config.rho)
        seq = subsample_sequence(y, scheme, n_extra=kappa1)
        psi = extract_moment_vector(seq, scheme, descriptors)
        est = invert_ou(psi.values, lag_used, moments=psi)
        rel[rep] = np.abs(est.theta - truth) / np.abs(truth)
    names = ("mean", "reversion", "noise")
    fraction = {
        n: float(np.mean(rel[:, i] <= config.tolerance)) for i, n in enumerate(names)
    }
    rms = {n: float(np.sqrt(np.mean(rel[:, i] ** 2))) for i, n in enumerate(names)}
    return EndToEndReport(
        names=names,
        truth=truth,
        rel_errors=rel,
        fraction_within=fraction,
        rms_rel=rms,
        tolerance=config.tolerance,
        scheme=scheme,
        config_hash=config.config_hash(),
    )


# ---------------------------------------------------------------------------
# Realized-variance pipeline (square-root volatility model)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HestonRVConfig:
    """Recover square-root variance parameters from realized-variance proxies.

    For each observation scale eps, the proxy quality rho(eps) is measured
    on a pilot path as the fourth-moment distance between the realized
    variance and the true variance, and the sub-sampling scheme follows the
    proxy-quality rule at that measured level.  The variance moment fed to
    the closed-form inversion is extrapolated from two positive lags, since
    microstructure-style noise concentrates at lag zero.
    """

    params: HestonParams
    epsilon_grid: tuple = (0.01, 0.005)
    replications: int = 120
    master_seed: int = 11
    u_pair: tuple = (0.25, 0.75)
    c_n: float = 1.0
    c_delta: float = 1.0
    fine_step: float | None = None
    pilot_span: float = 200.0
    batch: int = 24
    memory_cap_bytes: int = 2 * 1024**3

    def validate(self) -> None:
        self.params.validate()
        eps = np.asarray(self.epsilon_grid, dtype=float)
        if eps.size < 2 or (eps <= 0).any() or not (np.diff(eps) < 0).all():
            raise ParameterDomain("epsilon_grid must be positive, strictly decreasing, >= 2 levels")
        if self.replications < 30:
            raise ParameterDomain("need at least 30 replications")
        u1, u2 = self.u_pair
        if not (0 < u1 < u2):
            raise ParameterDomain("need 0 < u1 < u2")
        if self.batch < 1:
            raise ParameterDomain("batch must be >= 1")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class _RVPlan:
    eps: float
    window: int
    eps_stride: int  # fine steps per eps
    scheme: SubsamplingScheme  # on the eps grid
    kappa1: int
    kappa2: int
    lag1: float
    lag2: float
    rho_hat: float
    fine_rows: int


@dataclass
class HestonRVReport:
    truth: dict
    plans: list
    rms_rel: dict  # eps -> {param: rms relative error}
    failures: dict  # eps -> count of degenerate-moment replications
    config_hash: str

    def errors_at(self, eps: float) -> dict:
        return self.rms_rel[eps]

    def nonincreasing(self) -> bool:
        eps_sorted = sorted(self.rms_rel, reverse=True)  # large -> small
        for a, b in zip(eps_sorted, eps_sorted[1:]):
            for name in ("reversion", "level", "vol_of_vol"):
                if self.rms_rel[b][name] > self.rms_rel[a][name]:
                    return False
        return True

    def to_json_dict(self) -> dict:
        return {
            "truth": self.truth,
            "plans": self.plans,
            "rms_rel": {repr(k): v for k, v in self.rms_rel.items()},
            "failures": {repr(k): v for k, v in self.failures.items()},
            "config_hash": self.config_hash,
        }


def _rv_moments(y_coarse: np.ndarray, plan: _RVPlan):
    """Moment vector [mean, extrapolated variance, cov(lag1)] from RV samples."""
    n = plan.scheme.n_obs
    k1 = lagged_covariance(y_coarse, n, plan.kappa1, plan.scheme.big_delta).matrix[0, 0]
    k2 = lagged_covariance(y_coarse, n, plan.kappa2, plan.scheme.big_delta).matrix[0, 0]
    mean_v = empirical_mean(y_coarse[:n]).vector[0]
    if not (k1 > 0 and k2 > 0 and k2 < k1):
        raise MomentsOutsideModelRange(
            f"lagged covariances not usable: k1={k1}, k2={k2}"
        )
    rev = math.log(k1 / k2) / (plan.lag2 - plan.lag1)
    var_v = k1 * math.exp(rev * plan.lag1)
    return np.array([mean_v, var_v, k1])


def _pilot_rho(config: HestonRVConfig, delta_f: float, plans_eps) -> dict:
    """Fourth-moment distance between RV and the true variance on a pilot path."""
    length = int(math.ceil(config.pilot_span / delta_f))
    stream = RandomStreamSpec(
        config.master_seed, config.replications, StreamRole.PROCESS_NOISE
    )
    rng_var = stream.generator()
    rng_price = stream.role(StreamRole.AUXILIARY_NOISE).generator()
    v0 = heston_initial_variance(config.params, rng_var, size=1)
    z_var = rng_var.standard_normal((length, 1))
    z_price = rng_price.standard_normal((length, 1))
    r_path, v_path = _heston_core(config.params, length, delta_f, z_var, z_price, v0)
    rho = {}
    for eps, s_eps, window in plans_eps:
        r_eps = r_path[s_eps - 1 :: s_eps, 0]
        v_eps = v_path[s_eps - 1 :: s_eps, 0]
        rv = realized_volatility_observable(
            TrajectoryGrid(r_eps, eps), eps, window
        ).samples[:, 0]
        diff = np.abs(rv - v_eps[window:])
        rho[eps] = float(np.mean(diff**4) ** 0.25)
    return rho


def run_heston_rv(config: HestonRVConfig) -> HestonRVReport:
    """Full realized-variance recovery study across observation scales.

    One fine path per replication serves every eps level (common random
    numbers), so error comparisons across levels are paired.  Replications
    whose lagged covariances are unusable are counted as failures and
    excluded from the error summary.
    """
    config.validate()
    p = config.params
    delta_f = config.fine_step if config.fine_step is not None else min(config.epsilon_grid)
    plans_eps = []
    for eps in config.epsilon_grid:
        ratio = eps / delta_f
        s_eps = int(round(ratio))
        if s_eps < 1 or not math.isclose(ratio, s_eps, rel_tol=1e-9):
            raise SchemeGridMismatch(
                f"eps {eps} is not a multiple of the fine step {delta_f}"
            )
        plans_eps.append((eps, s_eps, default_rv_window(eps)))

    rho_hat = _pilot_rho(config, delta_f, plans_eps)

    plans = []
    for eps, s_eps, window in plans_eps:
        rec = scheme_from_rho(rho_hat[eps], config.c_n, config.c_delta)
        scheme = resolve_stride(rec.scheme, eps)
        u1, u2 = config.u_pair
        kappa1 = lag_index(u1, scheme.big_delta)
        kappa2 = lag_index(u2, scheme.big_delta)
        if kappa1 < 1 or kappa2 <= kappa1:
            raise ParameterDomain(
                f"lag pair {config.u_pair} degenerates on big_delta {scheme.big_delta}"
            )
        fine_rows = (window + (scheme.n_obs + kappa2) * scheme.stride) * s_eps
        plans.append(
            _RVPlan(
                eps=eps,
                window=window,
                eps_stride=s_eps,
                scheme=scheme,
                kappa1=kappa1,
                kappa2=kappa2,
                lag1=kappa1 * scheme.big_delta,
                lag2=kappa2 * scheme.big_delta,
                rho_hat=rho_hat[eps],
                fine_rows=fine_rows,
            )
        )
    length = max(plan.fine_rows for plan in plans)
    need = length * config.batch * 8 * 5
    if need > config.memory_cap_bytes:
        raise ResourceLimit(
            f"run needs about {need / 1e9:.2f} GB of workspace, cap is "
            f"{config.memory_cap_bytes / 1e9:.2f} GB"
        )

    truth = {"reversion": p.reversion, "level": p.level, "vol_of_vol": p.vol_of_vol}
    names = ("reversion", "level", "vol_of_vol")
    true_vec = np.array([p.reversion, p.level, p.vol_of_vol])
    sq_rel = {plan.eps: [] for plan in plans}
    failures = {plan.eps: 0 for plan in plans}

    for start in range(0, config.replications, config.batch):
        reps = range(start, min(start + config.batch, config.replications))
        width = len(reps)
        z_var = np.empty((length, width))
        z_price = np.empty((length, width))
        v0 = np.empty(width)
        for col, rep in enumerate(reps):
            stream = RandomStreamSpec(config.master_seed, rep, StreamRole.PROCESS_NOISE)
            rng_var = stream.generator()
            rng_price = stream.role(StreamRole.AUXILIARY_NOISE).generator()
            v0[col] = heston_initial_variance(config.params, rng_var)
            z_var[:, col] = rng_var.standard_normal(length)
            z_price[:, col] = rng_price.standard_normal(length)
        r_paths, _ = _heston_core(p, length, delta_f, z_var, z_price, v0)
        for col in range(width):
            for plan in plans:
                r_eps = r_paths[plan.eps_stride - 1 : plan.fine_rows : plan.eps_stride, col]
                rv = realized_volatility_observable(
                    TrajectoryGrid(r_eps, plan.eps), plan.eps, plan.window
                )
                coarse = subsample_sequence(rv, plan.scheme, n_extra=plan.kappa2)
                try:
                    psi = _rv_moments(coarse, plan)
                    est = invert_cir(psi, plan.lag1)
                except MomentsOutsideModelRange:
                    failures[plan.eps] += 1
                    continue
                rel = (est.theta - true_vec) / true_vec
                sq_rel[plan.eps].append(rel**2)

    rms_rel = {}
    for plan in plans:
        block = np.array(sq_rel[plan.eps])
        if block.size == 0:
            raise MomentsOutsideModelRange(
                f"every replication failed at eps {plan.eps}"
            )
        rms = np.sqrt(block.mean(axis=0))
        rms_rel[plan.eps] = {n: float(v) for n, v in zip(names, rms)}

    plan_dicts = [
        {
            "eps": plan.eps,
            "window": plan.window,
            "rho_hat": plan.rho_hat,
            "n_obs": plan.scheme.n_obs,
            "big_delta": plan.scheme.big_delta,
            "span": plan.scheme.span,
            "lag1": plan.lag1,
            "lag2": plan.lag2,
        }
        for plan in plans
    ]
    return HestonRVReport(
        truth=truth,
        plans=plan_dicts,
        rms_rel=rms_rel,
        failures=failures,
        config_hash=config.config_hash(),
    )
