"""Command-line entry point.

Subcommands::

    simulate   model config -> trajectory file(s) + run manifest
    estimate   trajectory file -> moment estimates (and optional inversion)
    scheme     recommend a sub-sampling scheme from rho or from a budget
    lab        run a convergence/recovery pipeline from a config or preset

Exit codes: 0 success, 1 failed assertion, 2 usage, 3 validation,
4 insufficient data or resources, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    assert_thresholds,
    build_bounds,
    build_endtoend,
    build_experiment,
    build_grid_request,
    build_heston_rv,
    build_model,
    build_run_settings,
    load_config,
    pipeline_kind,
)
from .errors import InsufficientData, SubmomentsError, UsageError, ValidationError
from .estimators import covariance_curve, empirical_mean, estimates_to_csv, lag_index
from .grids import (
    RandomStreamSpec,
    StreamRole,
    SubsamplingScheme,
    TrajectoryGrid,
    read_binary,
    read_csv,
    resolve_stride,
    subsample_sequence,
    write_binary,
    write_csv,
)
from .invert import (
    ParameterBall,
    default_ou_descriptors,
    extract_moment_vector,
    invert_cir,
    invert_ou,
    truncate_to_ball,
)
from .lab import (
    build_report,
    perturbation_gap_check,
    run_endtoend_ou,
    run_heston_rv,
    run_replications,
    save_ensemble,
)
from .models import (
    GradientDiffusionParams,
    HestonParams,
    OUParams,
    SlowFastParams,
    simulate_gradient_diffusion,
    simulate_heston,
    simulate_ou,
    simulate_slow_fast,
)
from .schemes import (
    error_bound_unobservable,
    reference_bound_inputs,
    scheme_from_n,
    scheme_from_rho,
)


def _write_grid(grid: TrajectoryGrid, path: Path) -> None:
    if path.suffix.lower() == ".csv":
        write_csv(grid, path)
    else:
        write_binary(grid, path)


def _read_grid(path: Path) -> TrajectoryGrid:
    if not path.exists():
        raise ValidationError(f"trajectory file not found: {path}")
    if path.suffix.lower() == ".csv":
        return read_csv(path)
    return read_binary(path)


def _write_json(payload: dict, path: Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}-{tag}{path.suffix}")


def _parse_floats(raw: str, flag: str) -> list:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated numbers, got {raw!r}")
    if not values:
        raise UsageError(f"{flag} needs at least one value")
    return values


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    bundle = load_config(args.config)
    model = build_model(bundle)
    run = build_run_settings(bundle)
    seed = run["master_seed"] if args.seed is None else args.seed
    if args.length is not None and args.delta is not None:
        length, delta = args.length, args.delta
    else:
        req = build_grid_request(bundle)
        length = req.length if args.length is None else args.length
        delta = req.delta if args.delta is None else args.delta
    if length < 1:
        raise ValidationError(f"length must be >= 1, got {length}")
    if delta <= 0:
        raise ValidationError(f"delta must be > 0, got {delta}")
    stream = RandomStreamSpec(seed, args.replication, StreamRole.PROCESS_NOISE)
    out = Path(args.output)
    outputs: list[str] = []
    if isinstance(model, OUParams):
        grid = simulate_ou(model, length, delta, stream)
        _write_grid(grid, out)
        outputs.append(str(out))
    elif isinstance(model, GradientDiffusionParams):
        grid = simulate_gradient_diffusion(model, length, delta, stream)
        _write_grid(grid, out)
        outputs.append(str(out))
    elif isinstance(model, HestonParams):
        returns, variance = simulate_heston(model, length, delta, stream)
        var_path = _sibling(out, "variance")
        _write_grid(returns, out)
        _write_grid(variance, var_path)
        outputs += [str(out), str(var_path)]
    elif isinstance(model, SlowFastParams):
        slow, reduced = simulate_slow_fast(model, length, delta, stream)
        red_path = _sibling(out, "reduced")
        _write_grid(slow, out)
        _write_grid(reduced, red_path)
        outputs += [str(out), str(red_path)]
    else:  # pragma: no cover - build_model only returns the four kinds
        raise ValidationError(f"cannot simulate model {type(model).__name__}")
    manifest = {
        "command": "simulate",
        "version": __version__,
        "config": str(args.config),
        "config_sha256": bundle.sha256,
        "master_seed": seed,
        "replication": args.replication,
        "length": length,
        "delta": delta,
        "outputs": outputs,
    }
    _write_json(manifest, Path(str(out) + ".manifest.json"))
    print(f"wrote {', '.join(outputs)}")
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    lags = _parse_floats(args.lags, "--lags")
    if any(u < 0 for u in lags):
        raise ValidationError("lags must be >= 0")
    grid = _read_grid(Path(args.input))
    big_delta = grid.delta if args.big_delta is None else args.big_delta
    if big_delta <= 0:
        raise ValidationError(f"big delta must be > 0, got {big_delta}")
    kmax = max(lag_index(u, big_delta) for u in lags)
    stride = max(1, int(round(big_delta / grid.delta)))
    if args.n_obs is not None:
        n_obs = args.n_obs
    else:
        n_obs = (grid.n_samples - args.offset) // stride - kmax
    if n_obs < 2:
        raise InsufficientData(
            f"trajectory of {grid.n_samples} rows leaves {n_obs} observations "
            f"after stride {stride} and lag allowance {kmax}"
        )
    scheme = resolve_stride(SubsamplingScheme(n_obs=n_obs, big_delta=big_delta), grid.delta)
    seq = subsample_sequence(grid, scheme, n_extra=kmax, offset=args.offset)
    curve = covariance_curve(seq, scheme, lags)
    mean = empirical_mean(seq[: scheme.n_obs])
    payload: dict = {
        "n_obs": scheme.n_obs,
        "big_delta": scheme.big_delta,
        "stride": scheme.stride,
        "mean": [float(v) for v in mean.vector],
        "covariances": [
            {
                "lag": est.lag_requested,
                "lag_used": est.lag_used,
                "kappa": est.kappa,
                "matrix": est.matrix.tolist(),
            }
            for est in curve
        ],
    }
    if args.csv is not None:
        estimates_to_csv(curve, args.csv)
        payload["csv"] = str(args.csv)
    if args.model is not None:
        u1 = args.u1
        if u1 is None:
            positive = [u for u in lags if lag_index(u, scheme.big_delta) >= 1]
            if not positive:
                raise UsageError("--model needs a lag that is positive on the coarse grid")
            u1 = positive[0]
        kappa1 = lag_index(u1, scheme.big_delta)
        if kappa1 < 1:
            raise ValidationError(
                f"lag {u1} rounds to zero on the coarse step {scheme.big_delta}"
            )
        lag_used = kappa1 * scheme.big_delta
        psi = extract_moment_vector(seq, scheme, default_ou_descriptors(lag_used))
        if args.model == "ou":
            est = invert_ou(psi.values, lag_used, moments=psi)
        else:
            est = invert_cir(psi.values, lag_used, moments=psi)
        if args.ball_radius is not None:
            center = (
                np.zeros(est.theta.size)
                if args.ball_center is None
                else np.array(_parse_floats(args.ball_center, "--ball-center"))
            )
            est = truncate_to_ball(est, ParameterBall(center=center, radius=args.ball_radius))
        payload["parameters"] = est.as_dict()
    _write_json(payload, None if args.output is None else Path(args.output))
    return 0


# ---------------------------------------------------------------------------
# scheme
# ---------------------------------------------------------------------------


def cmd_scheme(args) -> int:
    if (args.rho is None) == (args.n_obs is None):
        raise UsageError("give exactly one of --rho or --n-obs")
    inputs = reference_bound_inputs()
    if args.rho is not None:
        rec = scheme_from_rho(args.rho, args.c_n, args.c_delta)
        payload = {
            "rho": rec.rho,
            "n_obs": rec.scheme.n_obs,
            "big_delta": rec.scheme.big_delta,
            "span": rec.span,
            "predicted_error": rec.predicted_error,
        }
    else:
        scheme = scheme_from_n(args.n_obs, args.c_delta)
        payload = {
            "rho": None,
            "n_obs": scheme.n_obs,
            "big_delta": scheme.big_delta,
            "span": scheme.span,
            "predicted_error": error_bound_unobservable(inputs, scheme),
        }
    _write_json(payload, None if args.output is None else Path(args.output))
    return 0


# ---------------------------------------------------------------------------
# lab
# ---------------------------------------------------------------------------


def available_presets() -> list:
    root = importlib.resources.files("submoments") / "presets"
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def _preset_path(name: str) -> Path:
    path = importlib.resources.files("submoments") / "presets" / f"{name}.cfg"
    if not path.is_file():
        raise ValidationError(
            f"unknown preset {name!r}; available: {available_presets()}"
        )
    return Path(str(path))


def _check_line(name: str, ok: bool, detail: str) -> None:
    print(f"[CHECK] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


def _slope_band(slopes: dict, prefix: str, lo: float, hi: float):
    vals = {k: v["slope"] for k, v in slopes.items() if k.startswith(prefix)}
    if not vals:
        return False, f"no fitted slopes under {prefix!r}"
    ok = all(lo <= s <= hi for s in vals.values())
    listing = ", ".join(f"{k.split('/')[-1]}={v:.3f}" for k, v in sorted(vals.items()))
    return ok, f"band [{lo:g}, {hi:g}]: {listing}"


def _generic_checks(report, ensemble, config, inputs, checks: dict) -> list:
    results = []
    slopes = report.slopes

    def band(name, prefix):
        lo = checks.get(f"{name}_min", -math.inf)
        hi = checks.get(f"{name}_max", math.inf)
        results.append((name, *_slope_band(slopes, prefix, lo, hi)))

    if "err_x_slope_min" in checks or "err_x_slope_max" in checks:
        band("err_x_slope", "err_x_vs_n/")
    if "err_y_rho_slope_min" in checks or "err_y_rho_slope_max" in checks:
        band("err_y_rho_slope", "err_y_vs_rho/")
    if "gap_rho_slope_min" in checks or "gap_rho_slope_max" in checks:
        band("gap_rho_slope", "gap_vs_rho/")
    for key, slope_name in (
        ("mean_l2_slope", "mean_l2_vs_span"),
        ("mean_l4_slope", "mean_l4_vs_span"),
    ):
        if f"{key}_min" in checks or f"{key}_max" in checks:
            lo = checks.get(f"{key}_min", -math.inf)
            hi = checks.get(f"{key}_max", math.inf)
            if slope_name not in slopes:
                results.append((key, False, "slope not fitted"))
            else:
                s = slopes[slope_name]["slope"]
                results.append((key, lo <= s <= hi, f"slope {s:.3f} in [{lo:g}, {hi:g}]"))
    if "bound_fraction_min" in checks:
        need = checks["bound_fraction_min"]
        fr = report.bound_fractions
        if not fr:
            results.append(("bound_fraction", False, "no [bounds] section configured"))
        else:
            worst = min(fr.values())
            results.append(
                (
                    "bound_fraction",
                    worst >= need,
                    f"contained_x={fr['contained_x']:.3f}, "
                    f"contained_y={fr['contained_y']:.3f}, need >= {need:g}",
                )
            )
    if "ratio_band_max" in checks:
        cap = checks["ratio_band_max"]
        ratios = [row["err_y_l2"] / row["rho"] for row in report.rows if row["rho"] > 0]
        if not ratios:
            results.append(("ratio_band", False, "no positive-rho grid points"))
        else:
            spread = max(ratios) / min(ratios)
            results.append(
                ("ratio_band", spread <= cap, f"spread {spread:.3f} <= {cap:g}")
            )
    if checks.get("gap_within_bound") or checks.get("mean_within_bound"):
        nu_of = lambda rho: (1.0 + rho) * config.model.l4_norm
        gap_checks = perturbation_gap_check(ensemble, nu_of)
        if checks.get("gap_within_bound"):
            bad = [g for g in gap_checks if not g.cov_ok]
            detail = (
                "all covariance gaps below 4*nu*rho"
                if not bad
                else f"{len(bad)} level(s) exceed, worst rho {bad[0].rho:g}"
            )
            results.append(("gap_within_bound", not bad, detail))
        if checks.get("mean_within_bound"):
            bad = [g for g in gap_checks if not g.mean_ok]
            detail = (
                "all mean gaps below nu*rho"
                if not bad
                else f"{len(bad)} level(s) exceed, worst rho {bad[0].rho:g}"
            )
            results.append(("mean_within_bound", not bad, detail))
    return results


def _endtoend_checks(report, checks: dict) -> list:
    results = []
    if "min_fraction" in checks:
        need = checks["min_fraction"]
        worst = min(report.fraction_within.values())
        listing = ", ".join(f"{k}={v:.3f}" for k, v in report.fraction_within.items())
        results.append(
            ("recovery_fraction", report.passed(need), f"{listing}, need >= {need:g}")
        )
    return results


def _heston_checks(report, config, checks: dict) -> list:
    results = []
    finest = min(config.epsilon_grid)
    errs = report.errors_at(finest)
    for key, name in (
        ("level_rms_max", "level"),
        ("reversion_rms_max", "reversion"),
        ("vol_rms_max", "vol_of_vol"),
    ):
        if key in checks:
            cap = checks[key]
            val = errs[name]
            results.append((key, val <= cap, f"rms {val:.4f} <= {cap:g} at eps {finest:g}"))
    if checks.get("nonincreasing"):
        ok = report.nonincreasing()
        results.append(
            ("nonincreasing", ok, "rms errors do not grow as eps shrinks")
        )
    return results


def cmd_lab(args) -> int:
    if (args.config is None) == (args.preset is None):
        raise UsageError("give exactly one of --config or --preset")
    path = Path(args.config) if args.config else _preset_path(args.preset)
    bundle = load_config(path)
    if args.seed is not None:
        bundle.sections.setdefault("run", {})["master_seed"] = str(args.seed)
    if args.workers is not None:
        bundle.sections.setdefault("run", {})["workers"] = str(args.workers)
    kind = pipeline_kind(bundle)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = build_run_settings(bundle)
    outputs: list[str] = []
    results: list = []
    checks = assert_thresholds(bundle) if args.check else {}

    if kind == "generic":
        config = build_experiment(bundle)
        inputs = build_bounds(bundle, config.model)
        ensemble = run_replications(config)
        report = build_report(config, ensemble, inputs)
        report.write_json(out_dir / "report.json")
        report.write_csv(out_dir / "report.csv")
        outputs += [str(out_dir / "report.json"), str(out_dir / "report.csv")]
        if run["save_ensemble"]:
            save_ensemble(ensemble, out_dir / "ensemble.npz")
            outputs.append(str(out_dir / "ensemble.npz"))
        for key, fit in sorted(report.slopes.items()):
            print(f"slope {key}: {fit['slope']:.4f} (r2 {fit['r_squared']:.4f})")
        for key, val in sorted(report.bound_fractions.items()):
            print(f"bound fraction {key}: {val:.4f}")
        if checks:
            results = _generic_checks(report, ensemble, config, inputs, checks)
    elif kind == "ou_endtoend":
        config = build_endtoend(bundle)
        report = run_endtoend_ou(config)
        _write_json(report.to_json_dict(), out_dir / "endtoend.json")
        outputs.append(str(out_dir / "endtoend.json"))
        for name in report.names:
            print(
                f"{name}: fraction within {report.tolerance:g} = "
                f"{report.fraction_within[name]:.3f}, rms rel = {report.rms_rel[name]:.4f}"
            )
        if checks:
            results = _endtoend_checks(report, checks)
    else:
        config = build_heston_rv(bundle)
        report = run_heston_rv(config)
        _write_json(report.to_json_dict(), out_dir / "heston_rv.json")
        outputs.append(str(out_dir / "heston_rv.json"))
        for eps in config.epsilon_grid:
            errs = report.errors_at(eps)
            listing = ", ".join(f"{k}={v:.4f}" for k, v in errs.items())
            print(f"eps {eps:g}: rms rel {listing}")
        if checks:
            results = _heston_checks(report, config, checks)

    manifest = {
        "command": "lab",
        "version": __version__,
        "config": str(path),
        "config_sha256": bundle.sha256,
        "pipeline": kind,
        "outputs": outputs,
    }
    _write_json(manifest, out_dir / "manifest.json")
    if checks:
        failed = False
        for name, ok, detail in results:
            _check_line(name, ok, detail)
            failed = failed or not ok
        if failed:
            print("one or more checks failed", file=sys.stderr)
            return 1
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="submoments",
        description="Moment estimation for hidden stationary processes "
        "from sub-sampled proxy observations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a model trajectory")
    sim.add_argument("--config", required=True, help="model config file")
    sim.add_argument("--output", required=True, help="trajectory file (.bin or .csv)")
    sim.add_argument("--seed", type=int, default=None, help="override master seed")
    sim.add_argument("--replication", type=int, default=0, help="replication index")
    sim.add_argument("--length", type=int, default=None, help="override sample count")
    sim.add_argument("--delta", type=float, default=None, help="override grid step")
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="estimate moments from a trajectory file")
    est.add_argument("--input", required=True, help="trajectory file (.bin or .csv)")
    est.add_argument("--lags", required=True, help="comma-separated lags, e.g. 0,0.5,1")
    est.add_argument("--big-delta", type=float, default=None, help="coarse step (default: grid step)")
    est.add_argument("--n-obs", type=int, default=None, help="observations to use (default: all that fit)")
    est.add_argument("--offset", type=int, default=0, help="fine rows to skip at the start")
    est.add_argument("--model", choices=("ou", "cir"), default=None, help="invert parameters")
    est.add_argument("--u1", type=float, default=None, help="lag for the inversion (default: first positive lag)")
    est.add_argument("--ball-radius", type=float, default=None, help="safeguard radius; outside -> zero vector")
    est.add_argument("--ball-center", default=None, help="comma-separated safeguard center (default: origin)")
    est.add_argument("--csv", default=None, help="also write covariance rows to this CSV")
    est.add_argument("--output", default=None, help="write JSON here instead of stdout")
    est.set_defaults(func=cmd_estimate)

    sch = sub.add_parser("scheme", help="recommend a sub-sampling scheme")
    sch.add_argument("--rho", type=float, default=None, help="proxy error level in (0, 1)")
    sch.add_argument("--n-obs", type=int, default=None, help="observation budget (>= 8)")
    sch.add_argument("--c-n", type=float, default=1.0, help="budget constant for --rho")
    sch.add_argument("--c-delta", type=float, default=1.0, help="step constant")
    sch.add_argument("--output", default=None, help="write JSON here instead of stdout")
    sch.set_defaults(func=cmd_scheme)

    lab = sub.add_parser("lab", help="run a convergence or recovery pipeline")
    lab.add_argument("--config", default=None, help="pipeline config file")
    lab.add_argument("--preset", default=None, help="named built-in config")
    lab.add_argument("--output-dir", default=".", help="where to write reports")
    lab.add_argument("--seed", type=int, default=None, help="override master seed")
    lab.add_argument("--workers", type=int, default=None, help="override worker count")
    lab.add_argument(
        "--assert",
        dest="check",
        action="store_true",
        help="evaluate the config's [assert] thresholds; nonzero exit on failure",
    )
    lab.set_defaults(func=cmd_lab)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SubmomentsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
