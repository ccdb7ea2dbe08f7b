"""Experiment orchestration and bit-stable output writing.

Each command resolves its configuration, splits the ensemble into
fixed-size chunks of paths, evaluates the chunks on a bounded worker
pool (processes; inline when workers = 1), and folds the results back in
path order.  Chunk boundaries depend only on the ensemble size, so the
output files are byte-identical for any worker count.  Numeric cells are
written with shortest round-trip formatting and summaries as
sorted-key JSON, with no timestamps or machine-specific content.

Outputs per run: <out_dir>/summary.json (config echo, checks, command
payload) and <out_dir>/trace.csv (per-path or per-time rows); simulate
can additionally dump the Brownian paths in the binary BPATH1 format.

Exit codes: 0 all checks passed, 1 an invariant check failed, 2 a
configuration or runtime error (raised as ConfigError / ChainSDEError
and mapped by the CLI).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import (
    BoundRecord,
    InvariantReport,
    convergence_errors,
    evaluate_case_bounds,
    excursion_scan,
    fit_order,
)
from .config import ExperimentConfig
from .core import ChainState, SystemParams
from .coupling import (
    CoupledRun,
    InitJitter,
    Perturbation,
    ResolutionSplit,
    SchemeSplit,
    coupled_ensemble,
    estimate_divergence,
    gronwall_kernel_check,
)
from .errors import ChainSDEError, ConfigError
from .integrator import Scheme, SolveConfig, StopReason, solve_ensemble
from .noise import generate, path_seed, save_path
from .stopping import classify, guaranteed_window

__all__ = ["run", "parse_perturbation", "CHUNK"]

# paths per worker task; fixed so chunking (and therefore output bytes)
# never depends on the worker count
CHUNK = 256

_WORKERS_ENV = "CHAINSDE_WORKERS"


def parse_perturbation(text: str) -> Perturbation:
    """Parse 'jitter:<delta>', 'resolution:<la>,<lb>', or 'scheme'."""
    head, _, tail = text.strip().partition(":")
    try:
        if head == "jitter":
            return InitJitter(float(tail))
        if head == "resolution":
            la, _, lb = tail.partition(",")
            return ResolutionSplit(int(la), int(lb))
        if head == "scheme":
            if tail:
                raise ValueError("scheme takes no argument")
            return SchemeSplit()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for config field 'perturbation': {exc}") from None
    raise ConfigError(
        f"bad value for config field 'perturbation': unknown kind {head!r} "
        "(expected jitter:<delta>, resolution:<la>,<lb>, or scheme)"
    )


def _system_params(config: ExperimentConfig) -> SystemParams:
    try:
        return SystemParams(
            config.alpha, config.chain_order, ChainState(0.0, config.initial_coords)
        )
    except ValueError as exc:
        raise ConfigError(f"bad initial state or alpha: {exc}") from None


def _scheme(config: ExperimentConfig) -> Scheme:
    return Scheme(config.scheme)


def _resolve_workers(config: ExperimentConfig) -> int:
    override = os.environ.get(_WORKERS_ENV)
    if override is None:
        return config.workers
    try:
        value = int(override)
    except ValueError:
        raise ConfigError(f"bad value in {_WORKERS_ENV}: {override!r}") from None
    if value < 1:
        raise ConfigError(f"{_WORKERS_ENV} must be >= 1, got {value}")
    return value


def _chunked(seq, size):
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def _run_tasks(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    return value


def _write_summary(out_dir: Path, payload: dict) -> None:
    with open(out_dir / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _seeds(config: ExperimentConfig) -> list[int]:
    return [path_seed(config.seed, i) for i in range(config.ensemble)]


def _auto_stride(config: ExperimentConfig, n_steps: int) -> int:
    if config.trace_stride is not None:
        if n_steps % config.trace_stride != 0:
            raise ConfigError(
                f"trace_stride {config.trace_stride} must divide the step count {n_steps}"
            )
        return config.trace_stride
    stride = max(1, n_steps // 128)
    return stride


# ---------------------------------------------------------------- simulate


def _simulate_task(arg):
    config, seeds = arg
    params = _system_params(config)
    cfg = SolveConfig(
        level=config.level,
        band_n=config.band_n,
        max_time=config.horizon,
        scheme=_scheme(config),
        origin_eps=config.origin_eps,
        zero_noise=config.zero_noise,
    )
    stride = _auto_stride(config, 2**config.level)
    ens = solve_ensemble(params, cfg, seeds, record_stride=stride)
    return ens.times, ens.coords, ens.stop_reasons, ens.stop_indices


def _run_simulate(config: ExperimentConfig, out_dir: Path, workers: int) -> int:
    seeds = _seeds(config)
    parts = _run_tasks(_simulate_task, [(config, c) for c in _chunked(seeds, CHUNK)], workers)
    times = parts[0][0]
    coords = np.concatenate([p[1] for p in parts], axis=0)
    reasons = np.concatenate([p[2] for p in parts])
    indices = np.concatenate([p[3] for p in parts])
    h = config.horizon * 2.0**-config.level

    rows = []
    for i, seed in enumerate(seeds):
        for r, t in enumerate(times):
            row = [i, seed, float(t)]
            row.extend(float(c) for c in coords[i, r])
            if config.chain_order == 2:
                row.append(None)
            rows.append(row)
    _write_csv(out_dir / "trace.csv", ["path", "seed", "time", "x", "y", "z"], rows)

    if config.dump_paths:
        pdir = out_dir / "paths"
        pdir.mkdir(exist_ok=True)
        for i, seed in enumerate(seeds):
            with open(pdir / f"path_{i:05d}.bpath", "wb") as fh:
                save_path(generate(seed, config.horizon, config.level), fh)

    stop_counts = {
        StopReason(code).name.lower(): int((reasons == code).sum())
        for code in sorted(set(reasons.tolist()))
    }
    stop_times = indices * h
    payload = {
        "command": "simulate",
        "config": config.to_mapping(),
        "n_paths": len(seeds),
        "stop_counts": stop_counts,
        "stop_time_min": float(stop_times.min()),
        "stop_time_mean": float(stop_times.mean()),
        "stop_time_max": float(stop_times.max()),
        "checks": {},
        "exit_code": 0,
    }
    _write_summary(out_dir, payload)
    return 0


# ---------------------------------------------------------------- bounds


def _bounds_task(arg):
    config, seeds = arg
    params = _system_params(config)
    records = evaluate_case_bounds(
        params,
        config.band_n,
        seeds,
        config.level,
        scheme=_scheme(config),
        zero_noise=config.zero_noise,
        abs_tol_case=1e-9 if config.tol_abs is None else config.tol_abs,
        abs_tol_apriori=config.tol_abs,
        step_scale=config.tol_step_scale,
    )
    return records


def _run_bounds(config: ExperimentConfig, out_dir: Path, workers: int) -> int:
    if config.chain_order != 3:
        raise ConfigError("bounds requires chain_order 3 (the case machinery is 3-d)")
    params = _system_params(config)
    try:
        label = classify(params.initial, config.band_n)
    except ValueError as exc:
        raise ConfigError(f"bad initial state for bounds: {exc}") from None
    window = guaranteed_window(label, params.initial, config.band_n)
    seeds = _seeds(config)
    parts = _run_tasks(_bounds_task, [(config, c) for c in _chunked(seeds, CHUNK)], workers)
    records: list[BoundRecord] = [rec for part in parts for rec in part]
    report = InvariantReport(tuple(records))

    rows = [
        [rec.path_seed, rec.label, rec.inequality, rec.window, rec.margin, rec.tol,
         rec.passed]
        for rec in records
    ]
    _write_csv(
        out_dir / "trace.csv",
        ["seed", "label", "inequality", "window", "margin", "tol", "passed"],
        rows,
    )
    rates = report.pass_rates()
    payload = {
        "command": "bounds",
        "config": config.to_mapping(),
        "case_label": str(label),
        "band_n": config.band_n,
        "window": window,
        "n_paths": len(seeds),
        "pass_rates": rates,
        "worst_margins": report.worst_margins(),
        "checks": {"all_bounds_hold": report.all_passed},
        "exit_code": 0 if report.all_passed else 1,
    }
    _write_summary(out_dir, payload)
    return 0 if report.all_passed else 1


# ---------------------------------------------------------------- couple


def _couple_task(arg):
    config, seeds = arg
    params = _system_params(config)
    pert = parse_perturbation(config.perturbation)
    cfg = SolveConfig(
        level=config.level,
        band_n=config.band_n,
        max_time=config.horizon,
        scheme=_scheme(config),
        origin_eps=config.origin_eps,
        zero_noise=config.zero_noise,
    )
    runs = coupled_ensemble(params, seeds, pert, cfg)
    return [(run.path_seed, run.divergence) for run in runs]


def _run_couple(config: ExperimentConfig, out_dir: Path, workers: int) -> int:
    params = _system_params(config)
    pert = parse_perturbation(config.perturbation)
    seeds = _seeds(config)
    parts = _run_tasks(_couple_task, [(config, c) for c in _chunked(seeds, CHUNK)], workers)
    runs = [
        CoupledRun(seed, pert, div) for part in parts for seed, div in part
    ]
    trace = estimate_divergence(runs)

    rows = [
        [float(t), float(d), float(da), float(se), int(c)]
        for t, d, da, se, c in zip(
            trace.times, trace.D, trace.D_abs, trace.stderr, trace.counts
        )
    ]
    _write_csv(out_dir / "trace.csv", ["time", "D", "D_abs", "stderr", "count"], rows)

    checks: dict[str, bool] = {}
    if isinstance(pert, InitJitter) and pert.delta == 0.0:
        checks["null_coupling_identical"] = bool(
            all(np.all(run.sq_diff == 0.0) for run in runs)
        )

    kernel = None
    if config.chain_order == 3:
        try:
            label = classify(params.initial, config.band_n)
        except ValueError:
            label = None
        if label is not None:
            chk = gronwall_kernel_check(
                config.alpha, label, trace, float(trace.times[-1])
            )
            kernel = {
                "case_label": str(label),
                "kappa": chk.kappa,
                "integrable": chk.integrable,
                "c_hat": chk.c_hat,
                "window": chk.window,
            }

    ok = all(checks.values())
    payload = {
        "command": "couple",
        "config": config.to_mapping(),
        "perturbation": config.perturbation,
        "n_runs": len(runs),
        "terminal_D": float(trace.D[-1]),
        "terminal_stderr": float(trace.stderr[-1]),
        "terminal_count": int(trace.counts[-1]),
        "kernel_check": kernel,
        "checks": checks,
        "exit_code": 0 if ok else 1,
    }
    _write_summary(out_dir, payload)
    return 0 if ok else 1


# ---------------------------------------------------------------- excursions


def _excursions_task(arg):
    config, seeds = arg
    params = _system_params(config)
    cfg = SolveConfig(
        level=config.level,
        band_n=config.band_n,
        max_time=config.horizon,
        scheme=_scheme(config),
        origin_eps=config.origin_eps,
        zero_noise=config.zero_noise,
    )
    ens = solve_ensemble(params, cfg, seeds)
    out = []
    for i in range(ens.n_paths):
        stats = excursion_scan(ens.trajectory(i), cfg.origin_tolerance)
        out.append((seeds[i], stats.hit_times, stats.gaps))
    return out


def _run_excursions(config: ExperimentConfig, out_dir: Path, workers: int) -> int:
    seeds = _seeds(config)
    parts = _run_tasks(_excursions_task, [(config, c) for c in _chunked(seeds, CHUNK)], workers)
    rows = []
    min_gaps = []
    counts = []
    for part in parts:
        for seed, hits, gaps in part:
            counts.append(hits.size)
            if gaps.size:
                min_gaps.append(float(gaps.min()))
            for j, t in enumerate(hits):
                rows.append([seed, j, float(t), float(gaps[j - 1]) if j else None])
    _write_csv(out_dir / "trace.csv", ["seed", "hit_index", "hit_time", "gap"], rows)

    gaps_positive = all(g > 0.0 for g in min_gaps)
    payload = {
        "command": "excursions",
        "config": config.to_mapping(),
        "n_paths": len(seeds),
        "total_hits": int(sum(counts)),
        "paths_with_returns": len(min_gaps),
        "min_gap": min(min_gaps) if min_gaps else None,
        "min_gap_p5": float(np.percentile(min_gaps, 5.0)) if min_gaps else None,
        "min_gap_median": float(np.median(min_gaps)) if min_gaps else None,
        "checks": {"gaps_positive": gaps_positive},
        "exit_code": 0 if gaps_positive else 1,
    }
    _write_summary(out_dir, payload)
    return 0 if gaps_positive else 1


# ---------------------------------------------------------------- converge


def _converge_task(arg):
    config, seeds = arg
    params = _system_params(config)
    cfg = SolveConfig(
        level=config.level,
        band_n=config.band_n,
        max_time=config.horizon,
        scheme=_scheme(config),
        origin_eps=config.origin_eps,
        zero_noise=config.zero_noise,
    )
    return convergence_errors(params, cfg, config.levels, config.level_ref, seeds)


def _run_converge(config: ExperimentConfig, out_dir: Path, workers: int) -> int:
    if len(config.levels) < 2:
        raise ConfigError("converge needs at least two levels to fit an order")
    if len(set(config.levels)) != len(config.levels):
        raise ConfigError("levels must be distinct")
    seeds = _seeds(config)
    parts = _run_tasks(_converge_task, [(config, c) for c in _chunked(seeds, CHUNK)], workers)
    errors = np.concatenate(parts, axis=1)
    mean_errors = errors.mean(axis=1)
    steps = [config.horizon * 2.0**-lv for lv in config.levels]
    all_exact = bool(np.all(mean_errors == 0.0))
    order = None if all_exact else fit_order(steps, mean_errors)

    rows = []
    for j, lv in enumerate(config.levels):
        for i, seed in enumerate(seeds):
            rows.append([lv, i, seed, float(errors[j, i])])
    _write_csv(out_dir / "trace.csv", ["level", "path", "seed", "sup_error"], rows)

    by_level = np.argsort(config.levels)
    ordered = mean_errors[by_level]
    monotone = all_exact or bool(np.all(np.diff(ordered) <= 0.0))
    payload = {
        "command": "converge",
        "config": config.to_mapping(),
        "levels": list(config.levels),
        "steps": steps,
        "mean_errors": [float(e) for e in mean_errors],
        "fitted_order": order,
        "exact": all_exact,
        "checks": {"errors_nonincreasing_in_level": monotone},
        "exit_code": 0 if monotone else 1,
    }
    _write_summary(out_dir, payload)
    return 0 if monotone else 1


_RUNNERS = {
    "simulate": _run_simulate,
    "bounds": _run_bounds,
    "couple": _run_couple,
    "excursions": _run_excursions,
    "converge": _run_converge,
}


def run(config: ExperimentConfig) -> int:
    """Execute one experiment; returns the process exit code (0 or 1).

    Configuration and runtime problems raise ConfigError or another
    ChainSDEError, which the CLI maps to exit code 2.
    """
    workers = _resolve_workers(config)
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ChainSDEError(f"cannot create output directory {out_dir}: {exc}") from None
    return _RUNNERS[config.command](config, out_dir, workers)
