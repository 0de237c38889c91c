"""Command-line front end: ``panelpif {simulate,filter,search,profile}``.

Every command reads a run configuration, writes CSV outputs plus
``manifest.json`` (deterministic run description) and ``timing.json`` to the
output directory. Outputs other than ``timing.json`` are byte-identical for
a given seed whatever the worker count.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .core import DomainError, PanelData, ParameterSet, validate_panel
from .io import (DataError, flat_columns, flat_values, read_panel, read_params, write_covariates,
                 write_csv, write_panel, write_params)
from .likelihood import (combine_mean_of_products, combine_product_of_means, jackknife_se,
                         replicated_eval)
from .mcap import McapError, mcap, profile_design
from .models import get_model, simulate_panel
from .pif import (MarginalSettings, SearchResult, SearchSettings, rank_results, run_search_task,
                  search_tasks)
from .smc import FilteringError
from .streams import EVAL, MARGINAL, PROFILE, SEARCH, START, child_seed

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


@contextmanager
def _executor(workers: int):
    if workers <= 1:
        yield None
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield ex


def _map(executor, fn, items):
    if executor is None:
        return list(map(fn, items))
    return list(executor.map(fn, items, chunksize=1))


# ---------------------------------------------------------------------------
# shared plumbing


def load_data(cfg: RunConfig, seed: int) -> tuple[PanelData, ParameterSet | None]:
    """Panel from ``[data]`` or simulated from ``[simulate]``; returns (data, truth or None)."""
    model = get_model(cfg.model_id)
    if cfg.panel is not None:
        try:
            data = read_panel(cfg.resolve(cfg.panel), model,
                              covariates=cfg.resolve(cfg.covariates), t0=cfg.t0)
        except OSError as exc:
            raise DataError(f"data.panel: cannot read: {exc.strerror}") from None
        truth = None
    elif cfg.simulate is not None:
        sim = cfg.simulate
        truth = cfg.base_parameters(sim.units)
        data = simulate_panel(cfg.model_id, truth, sim.n_obs,
                              seed=sim.seed if sim.seed is not None else seed,
                              t0=sim.t0, dt=sim.dt)
    else:
        raise ConfigError("data: give [data] panel = PATH or a [simulate] section")
    report = validate_panel(data, model)
    if not report.ok:
        raise DataError("data: " + "; ".join(str(v) for v in report.violations[:5]))
    return data, truth


def _check_params(ps: ParameterSet, cfg: RunConfig) -> None:
    model = get_model(cfg.model_id)
    for name in model.param_names:
        if name not in ps.names:
            raise ConfigError(f"params: missing parameter {name}")
    for name in ps.names:
        if name not in model.param_names:
            raise ConfigError(f"params: {name} is not a parameter of {cfg.model_id}")


def _write_manifest(out: Path, command: str, cfg: RunConfig, seed: int, streams, extra=None):
    files = sorted(p for p in out.rglob("*") if p.is_file()
                   and p.name not in ("manifest.json", "timing.json"))
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_sha256": cfg.sha256,
        "config": cfg.text,
        "streams": streams,
        "outputs": {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
                    for p in files},
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_timing(out: Path, start_wall: float, start_cpu, workers: int):
    now = os.times()
    cpu = sum(now[:4]) - sum(start_cpu[:4])
    (out / "timing.json").write_text(json.dumps(
        {"wall_seconds": time.perf_counter() - start_wall, "cpu_seconds": cpu,
         "workers": workers}, indent=2) + "\n")


def _search_settings(cfg: RunConfig, keep_pif: bool) -> SearchSettings:
    a = cfg.algorithm
    marginal = None
    if cfg.use_marginal():
        marginal = MarginalSettings(a["Nmif_u"], a["Np_if_u"], cfg.marginal_cooling(),
                                    eval_J=a["Np_pf"], eval_reps=a["Nrep_pf_u"] or 0)
    return SearchSettings(a["Nmif"], a["Np_if"], cfg.cooling_schedule(), cfg.policy(), marginal,
                          a["Np_pf"], a["Nrep_pf"], cfg.resampler, keep_pif)


def _search_streams(seed: int, R: int):
    return [{"replicate": r, "start": [seed, START, r], "pif_seed": child_seed(seed, SEARCH, r),
             "marginal_seed": child_seed(seed, MARGINAL, r), "eval_seed": child_seed(seed, EVAL)}
            for r in range(R)]


def _estimate_rows(results, labels, template: ParameterSet):
    rows = []
    for rank, res in enumerate(results, 1):
        vals = flat_values(res.estimate) if res.estimate is not None else [float("nan")] * len(
            flat_columns(template, labels))
        rows.append([rank, res.replicate + 1, res.loglik, res.se, res.error or "", *vals])
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path, seed: int, workers: int = 1) -> int:
    if cfg.simulate is None:
        raise ConfigError("simulate: section missing")
    data, truth = load_data(cfg, seed)
    write_panel(data, out / "panel.csv")
    write_covariates(data, out / "covariates.csv")
    write_params(truth, out / "truth.csv", data.labels)
    sim_seed = cfg.simulate.seed if cfg.simulate.seed is not None else seed
    _write_manifest(out, "simulate", cfg, seed, {"simulate": [sim_seed, "SIMULATE", "unit"]})
    return EXIT_OK


def cmd_filter(cfg: RunConfig, out: Path, seed: int, workers: int = 1,
               params_path: str | None = None) -> int:
    data, truth = load_data(cfg, seed)
    if params_path is not None:
        try:
            theta = read_params(params_path, data.labels)
        except OSError as exc:
            raise DataError(f"params: cannot read {params_path}: {exc.strerror}") from None
    else:
        theta = truth if truth is not None else cfg.base_parameters(len(data))
    _check_params(theta, cfg)
    model = get_model(cfg.model_id)
    J, R = cfg.algorithm["Np_pf"], cfg.algorithm["Nrep_pf"]
    with _executor(workers) as ex:
        m = replicated_eval(model, data, theta, J, R, seed, cfg.resampler, keep_results=True,
                            executor=ex)
    write_csv(out / "eval.csv", ["unit", "replicate", "loglik"],
              [[lab, r + 1, m.logliks[u, r]] for u, lab in enumerate(data.labels) for r in range(R)])
    write_csv(out / "summary.csv", ["combiner", "loglik", "se"], [
        ["product_of_means", combine_product_of_means(m), jackknife_se(m, combine_product_of_means)],
        ["mean_of_products", combine_mean_of_products(m), jackknife_se(m, combine_mean_of_products)],
    ])
    diag = []
    for u, unit in enumerate(data):
        for r in range(R):
            res = m.results[u][r]
            for n in range(unit.n_obs):
                diag.append([unit.label, n + 1, unit.times[n], res.cond_loglik[n], res.ess[n], r + 1])
    write_csv(out / "diagnostics.csv", ["unit", "n", "time", "cond_loglik", "ess", "replicate"], diag)
    _write_manifest(out, "filter", cfg, seed, {"eval": [seed, EVAL, "replicate", "unit"]},
                    {"failures": m.warnings})
    return EXIT_OK


def _write_traces(out: Path, results, labels):
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for res in results:
        if res.pif is None:
            continue
        layout = res.pif.layout
        names = [n if u is None else f"{n}[{labels[u]}]" for n, u in layout.column_labels()]
        rows = []
        for m in range(res.pif.loglik_trace.size):
            for c, name in enumerate(names):
                rows.append([m + 1, name, res.pif.mean_trace[m, c], res.pif.sigma_trace[m, c],
                             res.pif.loglik_trace[m]])
        write_csv(tdir / f"trace_{res.replicate + 1:03d}.csv",
                  ["m", "parameter", "swarm_mean", "sigma_m", "perturbed_loglik"], rows)


def cmd_search(cfg: RunConfig, out: Path, seed: int, workers: int = 1) -> int:
    data, truth = load_data(cfg, seed)
    base = cfg.base_parameters(len(data))
    model = get_model(cfg.model_id)
    settings = _search_settings(cfg, keep_pif=True)
    R = cfg.algorithm["Nrep_if"]
    tasks = search_tasks(model, data, base, cfg.box(), R, settings, seed)
    with _executor(workers) as ex:
        results = rank_results(_map(ex, run_search_task, tasks))
    labels = data.labels
    write_csv(out / "estimates.csv",
              ["rank", "replicate", "loglik", "se", "error"] + flat_columns(base, labels),
              _estimate_rows(results, labels, base))
    _write_traces(out, results, labels)
    best = results[0]
    if best.estimate is not None:
        write_params(best.estimate, out / "best.csv", labels)
    _write_manifest(out, "search", cfg, seed, _search_streams(seed, R))
    if best.estimate is None:
        raise NumericalFailure("every search replicate failed: " + (best.error or ""))
    return EXIT_OK


def cmd_profile(cfg: RunConfig, out: Path, seed: int, workers: int = 1,
                parameter: str | None = None, lo: float | None = None, hi: float | None = None,
                points: int | None = None) -> int:
    parameter = parameter or cfg.profile.parameter
    lo = cfg.profile.lo if lo is None else lo
    hi = cfg.profile.hi if hi is None else hi
    K = cfg.profile.points if points is None else points
    if parameter is None:
        raise ConfigError("profile.parameter: missing")
    if parameter not in cfg.params:
        raise ConfigError(f"profile.parameter: {parameter!r} is not a parameter of {cfg.model_id}")
    if lo is None or hi is None or not lo < hi:
        raise ConfigError("profile.lo: need lo < hi")
    if K < 5:
        raise ConfigError("profile.points: need at least 5 points")
    data, truth = load_data(cfg, seed)
    base = cfg.base_parameters(len(data))
    model = get_model(cfg.model_id)
    settings = _search_settings(cfg, keep_pif=False)
    R = cfg.algorithm["Nrep_if"]
    try:
        design = profile_design(parameter, lo, hi, K, base, cfg.box(), settings.cooling,
                                cooling_u=settings.marginal.cooling if settings.marginal else None)
    except ValueError as exc:
        raise ConfigError(f"profile.parameter: {exc}") from None
    tasks, streams = [], []
    for task in design:
        s = replace(settings, cooling=task.cooling)
        if s.marginal is not None:
            s = replace(s, marginal=replace(s.marginal, cooling=task.cooling_u))
        pseed = child_seed(seed, PROFILE, task.index)
        pbase = base.replace(shared={parameter: task.phi})
        tasks.extend(search_tasks(model, data, pbase, task.box, R, s, pseed, task.starts))
        streams.append({"point": task.index + 1, "phi": task.phi, "seed": pseed,
                        "replicates": _search_streams(pseed, R)})
    with _executor(workers) as ex:
        flat = _map(ex, run_search_task, tasks)

    rows, fit_phi, fit_ll = [], [], []
    for k, task in enumerate(design):
        group = rank_results(flat[k * R:(k + 1) * R])
        for i, res in enumerate(group):
            vals = (flat_values(res.estimate) if res.estimate is not None
                    else [float("nan")] * len(flat_columns(base, data.labels)))
            rows.append([task.phi, res.loglik, res.se, res.replicate + 1, i == 0, res.error or "", *vals])
            if i == 0 or cfg.profile.select == "all":
                fit_phi.append(task.phi)
                fit_ll.append(res.loglik)
    write_csv(out / "profile_points.csv",
              ["phi", "loglik", "se", "replicate", "best", "error"] + flat_columns(base, data.labels),
              rows)
    try:
        res = mcap(np.array(fit_phi), np.array(fit_ll), lam=cfg.lam)
    except McapError as exc:
        _write_manifest(out, "profile", cfg, seed, streams, {"parameter": parameter, "mcap_error": str(exc)})
        raise NumericalFailure(f"mcap: {exc}") from None
    write_csv(out / "profile_curve.csv", ["phi", "smoothed_loglik"], zip(res.grid, res.smoothed))
    write_csv(out / "profile_summary.csv",
              ["parameter", "phi_hat", "se_stat", "se_mc", "se_total", "delta", "lo", "hi",
               "truncated_lo", "truncated_hi", "multimodal", "lambda", "n_points"],
              [[parameter, res.phi_hat, res.se_stat, res.se_mc, res.se_total, res.delta,
                res.ci[0], res.ci[1], res.truncated[0], res.truncated[1], res.multimodal, res.lam,
                res.n_points]])
    _write_manifest(out, "profile", cfg, seed, streams, {"parameter": parameter})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panelpif", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--seed", type=int, default=None, help="overrides run.seed")
        sp.add_argument("--workers", type=int, default=None, help="overrides run.workers")
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    common(sub.add_parser("simulate", help="simulate a panel from the configured model"))
    f = common(sub.add_parser("filter", help="replicated likelihood evaluation"))
    f.add_argument("--params", default=None, help="parameter file (default: configured values)")
    common(sub.add_parser("search", help="multi-start panel iterated filtering"))
    pr = common(sub.add_parser("profile", help="profile likelihood with an MCAP interval"))
    pr.add_argument("--parameter", default=None)
    pr.add_argument("--range", nargs=2, type=float, default=None, metavar=("LO", "HI"))
    pr.add_argument("--points", type=int, default=None)
    return p


def run(args) -> int:
    start_wall, start_cpu = time.perf_counter(), os.times()
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    workers = cfg.workers if args.workers is None else args.workers
    if workers < 1:
        raise ConfigError("--workers: must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "simulate":
        code = cmd_simulate(cfg, out, seed, workers)
    elif args.command == "filter":
        code = cmd_filter(cfg, out, seed, workers, args.params)
    elif args.command == "search":
        code = cmd_search(cfg, out, seed, workers)
    else:
        lo, hi = args.range if args.range else (None, None)
        code = cmd_profile(cfg, out, seed, workers, args.parameter, lo, hi, args.points)
    _write_timing(out, start_wall, start_cpu, workers)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, DataError, DomainError) as exc:
        print(f"panelpif: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FilteringError, McapError, FloatingPointError) as exc:
        print(f"panelpif: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
