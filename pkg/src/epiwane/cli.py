"""Command-line entry point.

Six subcommands tie the modules into reproducible experiments:

  simulate   one exact population trajectory plus its event log
  flln       the deterministic limit curves
  fclt       driver covariance and an ensemble of fluctuation paths
  ensemble   replicate ensembles at each configured population size
  verify     the full statistical report against the limit predictions
  compare    recompute the model comparison from stored artifacts

Usage: epiwane <cmd> --config <path> [--out <dir>] [--seed <u64>]
[--threads <n>].  The environment variable EPIWANE_LOG sets the log level.
Every artifact embeds the configuration fingerprint and master seed;
``compare`` refuses artifacts whose fingerprint does not match the config it
was given.  With a fixed (config, seed) and --threads 1 each subcommand's
output is byte-identical across runs; thread count never changes ensemble
results, only wall time.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from typing import Dict, List, Optional

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, parse_config
from .fclt import (
    DriverSample,
    FluctuationPath,
    estimate_driver_covariance,
    sample_driver,
    solve_fluctuation_ensemble,
)
from .flln import LimitSolution, solve_flln, solve_markovian_ode
from .grid import Grid
from .simulator import simulate_coupled, simulate_population, simulate_quarantine
from .streams import derive_seed
from .verify import (
    QUANTITIES,
    EnsembleSummary,
    MetricRecord,
    Report,
    check_coupling_bounds,
    compare_fclt,
    fit_convergence_rate,
    run_ensemble,
)

__all__ = ["main"]

log = logging.getLogger("epiwane")

# seed lanes so no two subcommand stages share a stream family
_LANE_SIMULATE = 0
_LANE_COV = 1
_LANE_DRIVERS = 2
_LANE_ENSEMBLE = 3
_LANE_COUPLING = 4

_DEV_FILE_RE = re.compile(r"^deviations_N(\d+)\.csv$")
# covariance matrices beyond this order are summarized by their diagonal
_MAX_COV_EXPORT = 1600


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _solve_limit(config: ExperimentConfig) -> LimitSolution:
    return solve_flln(config.law(), config.initial_law(), config.grid(),
                      tol=config.tol)


def _limit_columns(sol: LimitSolution) -> Dict[str, np.ndarray]:
    return {"t": sol.grid.times, "sbar": sol.sbar, "fbar": sol.fbar,
            "ubar": sol.ubar, "ibar": sol.ibar}


def _cmd_simulate(config: ExperimentConfig, out: str, seed: int,
                  threads: int) -> int:
    n = config.population_sizes[0]
    traj = simulate_population(config.law(), config.initial_law(), n,
                               config.grid(), derive_seed(seed, _LANE_SIMULATE, 0),
                               bernoulli_init=config.bernoulli_init)
    fp = config.fingerprint()
    io.write_table(os.path.join(out, "trajectory.csv"), {
        "t": traj.grid.times, "fbar": traj.fbar, "sbar": traj.sbar,
        "infected": traj.infected, "uninfected": traj.uninfected,
    }, fingerprint=fp, seed=seed)
    events = traj.events
    io.write_table(os.path.join(out, "events.csv"), {
        "t": np.array([e[0] for e in events]),
        "k": np.array([e[1] for e in events], dtype=np.int64),
        "i": np.array([e[2] for e in events], dtype=np.int64),
    }, fingerprint=fp, seed=seed)
    log.info("simulate: N=%d, %d infection events, %d candidates",
             n, len(events), traj.candidates)
    return 0


def _cmd_flln(config: ExperimentConfig, out: str, seed: int,
              threads: int) -> int:
    sol = _solve_limit(config)
    io.write_table(os.path.join(out, "flln.csv"), _limit_columns(sol),
                   fingerprint=config.fingerprint(), seed=seed)
    log.info("flln: %d sweeps, residual %.3e", sol.iterations, sol.residual)
    return 0


def _solve_fclt_paths(config: ExperimentConfig, seed: int):
    law, init, grid = config.law(), config.initial_law(), config.grid()
    sol = solve_flln(law, init, grid, tol=config.tol)
    cov = estimate_driver_covariance(law, init, sol, config.fclt.agents, grid,
                                     seed=derive_seed(seed, _LANE_COV, 0))
    drivers = [sample_driver(cov, derive_seed(seed, _LANE_DRIVERS, k))
               for k in range(config.fclt.driver_samples)]
    paths = solve_fluctuation_ensemble(
        drivers, sol, law, init, grid,
        corollary_literal=config.fclt.corollary_literal)
    return sol, cov, paths


def _write_paths(path: str, paths: List[FluctuationPath], fp: str,
                 seed: int) -> None:
    g = paths[0].grid.n
    p = len(paths)
    sample = np.repeat(np.arange(p, dtype=np.int64), g)
    t = np.tile(paths[0].grid.times, p)
    io.write_table(path, {
        "sample": sample, "t": t,
        "shat": np.concatenate([q.shat for q in paths]),
        "fhat": np.concatenate([q.fhat for q in paths]),
        "uhat": np.concatenate([q.uhat for q in paths]),
        "ihat": np.concatenate([q.ihat for q in paths]),
    }, fingerprint=fp, seed=seed)


def _cmd_fclt(config: ExperimentConfig, out: str, seed: int,
              threads: int) -> int:
    _, cov, paths = _solve_fclt_paths(config, seed)
    fp = config.fingerprint()
    payload = {
        "grid": {"dt": cov.grid.dt, "n": cov.grid.n},
        "m_samples": cov.m_samples,
        "diagonal": cov.matrix.diagonal().tolist(),
        "diagonal_se": cov.se.diagonal().tolist(),
    }
    if cov.matrix.shape[0] <= _MAX_COV_EXPORT:
        payload["matrix"] = cov.matrix.tolist()
    else:
        payload["matrix_omitted"] = ("order above "
                                     f"{_MAX_COV_EXPORT}; rerun with a "
                                     "coarser grid to export in full")
    io.write_report(os.path.join(out, "covariance.json"), payload,
                    fingerprint=fp, seed=seed)
    _write_paths(os.path.join(out, "fluctuations.csv"), paths, fp, seed)
    log.info("fclt: %d agents, %d paths, worst residual %.3e",
             cov.m_samples, len(paths), max(p.residual for p in paths))
    return 0


def _cmd_ensemble(config: ExperimentConfig, out: str, seed: int,
                  threads: int) -> int:
    fp = config.fingerprint()
    for j, n in enumerate(config.population_sizes):
        summ = run_ensemble(config, n, config.replicates,
                            derive_seed(seed, _LANE_ENSEMBLE, j),
                            threads=threads)
        columns: Dict[str, np.ndarray] = {"t": summ.grid.times}
        for q in QUANTITIES:
            columns[f"mean_{q}"] = summ.mean[q]
            if summ.var is not None:
                columns[f"var_{q}"] = summ.var[q]
        io.write_table(os.path.join(out, f"ensemble_N{n}.csv"), columns,
                       fingerprint=fp, seed=seed)
        m, g = summ.m, summ.grid.n
        dev_cols: Dict[str, np.ndarray] = {
            "sample": np.repeat(np.arange(m, dtype=np.int64), g),
            "t": np.tile(summ.grid.times, m),
        }
        for q in QUANTITIES:
            dev_cols[q] = summ.deviations[q].reshape(-1)
        io.write_table(os.path.join(out, f"deviations_N{n}.csv"), dev_cols,
                       fingerprint=fp, seed=seed)
        log.info("ensemble: N=%d, M=%d done", n, summ.m)
    return 0


def _markov_parameters(config: ExperimentConfig):
    prof = config.profile
    if prof.get("family") != "sis_indicator":
        return None
    dur = prof.get("duration", {})
    if dur.get("kind") != "exponential":
        return None
    return float(prof["lambda_base"]), float(dur["mu"])


def _bound_grid(config: ExperimentConfig) -> Grid:
    # error bounds blow up like exp(2 lambda_star T): cap the horizon so the
    # coupling checks stay informative
    lam = config.law().lambda_star
    cap = min(config.horizon, 3.0 / lam)
    steps = max(1, int(np.floor(cap / config.dt + 1e-9)))
    return Grid(config.dt, steps + 1)


def _verify_report(config: ExperimentConfig, seed: int, threads: int) -> Report:
    law, init, grid = config.law(), config.initial_law(), config.grid()
    sol, cov, paths = _solve_fclt_paths(config, seed)
    report = Report()

    # deterministic limit sanity: compartments close, and in the memoryless
    # case the infected fraction solves the classic ODE
    closure = float(np.max(np.abs(sol.ubar + sol.ibar - 1.0)))
    closure_tol = 10 * config.tol + (law.lambda_star * grid.dt) ** 2
    report.metrics.append(MetricRecord(
        name="flln.compartment_closure", target=0.0, value=closure,
        tol=closure_tol, passed=bool(closure <= closure_tol),
        paper_ref="uninfected and infected fractions sum to one in the limit"))
    markov = _markov_parameters(config)
    if markov is not None:
        lam_base, mu = markov
        ode = solve_markovian_ode(lam_base, mu, init.p_infected, grid)
        gap = float(np.max(np.abs(sol.ibar - ode.ibar)))
        tol = max(10 * config.tol, 2.0 * (lam_base * grid.dt) ** 2)
        report.metrics.append(MetricRecord(
            name="flln.markov_ode_gap", target=0.0, value=gap, tol=tol,
            passed=bool(gap <= tol),
            paper_ref=("with memoryless profiles the limit infected fraction "
                       "solves di/dt = lam i (1 - i) - mu i")))

    # fluctuation model internal checks
    worst = max(p.residual for p in paths)
    res_tol = 10 * grid.dt ** 2
    report.metrics.append(MetricRecord(
        name="fclt.residual", target=0.0, value=float(worst), tol=res_tol,
        passed=bool(worst <= res_tol),
        paper_ref=("solved fluctuation paths satisfy the discretized linear "
                   "Volterra system to quadrature accuracy")))
    try:
        cov.cholesky_factor()
        psd = True
    except RuntimeError:
        psd = False
    report.metrics.append(MetricRecord(
        name="fclt.cov_psd", target=1.0, value=float(psd), tol=0.0,
        passed=psd,
        paper_ref="the driver covariance factorizes after tiny jitter"))
    lam0 = (float(config.profile["segments"]["lambda_values"][0])
            if config.profile["family"] == "piecewise_constant"
            else float(config.profile["lambda_base"]))
    p0 = init.p_infected
    idx = grid.n  # first diagonal entry of the infectivity-functional block
    target = p0 * (1 - p0) * lam0 ** 2
    value = float(cov.matrix[idx, idx])
    se = float(cov.se[idx, idx])
    tol = max(4 * se, 1e-12)
    report.metrics.append(MetricRecord(
        name="fclt.cov_t0_closed_form", target=target, value=value, tol=tol,
        passed=bool(abs(value - target) <= tol),
        paper_ref=("at time zero the infectivity functional is a scaled "
                   "Bernoulli(p): variance p (1 - p) lambda(0)^2")))

    # finite-N ensembles: limit tracking, convergence rate, fluctuation match
    summaries: List[EnsembleSummary] = []
    for j, n in enumerate(config.population_sizes):
        summaries.append(run_ensemble(config, n, config.replicates,
                                      derive_seed(seed, _LANE_ENSEMBLE, j),
                                      threads=threads))
    largest = summaries[-1]
    if largest.m >= 2:
        se_mean = np.sqrt(largest.var["fbar"] / largest.m)
        gap = np.abs(largest.mean["fbar"] - sol.fbar)
        bands = float(np.max(gap - 3.0 * se_mean - 1e-12))
        report.metrics.append(MetricRecord(
            name="flln.ensemble_mean_band", target=0.0, value=bands,
            tol=0.0, passed=bool(bands <= 0.0),
            paper_ref=("the ensemble mean aggregate force stays within 3 "
                       "standard-error bands of the deterministic limit")))
    if len(config.population_sizes) >= 3:
        mid = _probe_idx(grid, grid.horizon / 2)
        errors = [float(np.mean(np.abs(s.deviations["fbar"][:, mid])))
                  / np.sqrt(s.n) for s in summaries]
        fit = fit_convergence_rate(list(config.population_sizes), errors)
        report.rate_fit = fit
        report.metrics.append(MetricRecord(
            name="rate.slope", target=-0.5, value=fit.slope, tol=0.15,
            passed=bool(-0.65 <= fit.slope <= -0.35),
            paper_ref=("mean absolute deviation from the limit decays like "
                       "N^(-1/2)")))
    if largest.m >= 2:
        report.merge(compare_fclt(largest, paths,
                                  probes=config.probe_times()))

    # coupling and quarantine bounds on a horizon where they bite
    bgrid = _bound_grid(config)
    bsol = solve_flln(law, init, bgrid, tol=config.tol)
    n_big = config.population_sizes[-1]
    _, _, diag = simulate_coupled(law, init, n_big, bsol,
                                  derive_seed(seed, _LANE_COUPLING, 0))
    report.merge(check_coupling_bounds(diag, law, bgrid.horizon))
    # deterministic assignment guarantees index 0 starts infected whenever
    # N p >= 1, so the quarantine comparison actually diverges
    _, _, qdiag = simulate_quarantine(law, init, n_big, bgrid,
                                      derive_seed(seed, _LANE_COUPLING, 1),
                                      quarantined=(0,))
    report.merge(check_coupling_bounds(qdiag, law, bgrid.horizon, n=n_big))
    return report


def _probe_idx(grid: Grid, t: float) -> int:
    return int(round(t / grid.dt))


def _print_report(report: Report) -> None:
    for record in report.metrics:
        flag = "PASS" if record.passed else "FAIL"
        print(f"{flag} {record.name}: value {record.value:.6g} vs target "
              f"{record.target:.6g} (tol {record.tol:.3g})")
    if report.rate_fit is not None:
        print(f"     rate fit: slope {report.rate_fit.slope:.3f}, "
              f"R^2 {report.rate_fit.r_squared:.3f}")
    rejected = sum(1 for k in report.ks if not k.passed)
    if report.ks:
        print(f"     KS: {len(report.ks) - rejected}/{len(report.ks)} probes "
              f"accepted")


def _cmd_verify(config: ExperimentConfig, out: str, seed: int,
                threads: int) -> int:
    report = _verify_report(config, seed, threads)
    io.write_report(os.path.join(out, "report.json"), report.to_dict(),
                    fingerprint=config.fingerprint(), seed=seed)
    _print_report(report)
    return 0 if report.all_pass else 1


def _load_deviation_summary(out: str, config: ExperimentConfig
                            ) -> EnsembleSummary:
    best: Optional[str] = None
    best_n = -1
    for name in os.listdir(out):
        match = _DEV_FILE_RE.match(name)
        if match and int(match.group(1)) > best_n:
            best_n = int(match.group(1))
            best = name
    if best is None:
        raise FileNotFoundError(
            f"no deviations_N*.csv in {out}; run the ensemble subcommand first")
    meta, cols = io.read_table(os.path.join(out, best))
    io.require_fingerprint(config.fingerprint(), meta["fingerprint"], best)
    grid = config.grid()
    g = grid.n
    if cols["t"].shape[0] % g:
        raise ValueError(f"{best}: row count is not a multiple of the "
                         f"configured grid ({g} points)")
    m = cols["t"].shape[0] // g
    deviations = {q: cols[q].reshape(m, g) for q in QUANTITIES}
    zeros = {q: np.zeros(g) for q in QUANTITIES}
    return EnsembleSummary(fingerprint=meta["fingerprint"], n=best_n, m=m,
                           grid=grid, flln=None, mean=zeros, var=None,
                           deviations=deviations, cross_cov=None)


def _load_paths(out: str, config: ExperimentConfig) -> List[FluctuationPath]:
    path = os.path.join(out, "fluctuations.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"{path} not found; run the fclt subcommand first")
    meta, cols = io.read_table(path)
    io.require_fingerprint(config.fingerprint(), meta["fingerprint"],
                           "fluctuations.csv")
    grid = config.grid()
    g = grid.n
    if cols["t"].shape[0] % g:
        raise ValueError("fluctuations.csv: row count is not a multiple of "
                         f"the configured grid ({g} points)")
    p = cols["t"].shape[0] // g
    fields = {name: cols[name].reshape(p, g)
              for name in ("shat", "fhat", "uhat", "ihat")}
    return [FluctuationPath(grid=grid, shat=fields["shat"][k],
                            fhat=fields["fhat"][k], uhat=fields["uhat"][k],
                            ihat=fields["ihat"][k], residual=0.0)
            for k in range(p)]


def _cmd_compare(config: ExperimentConfig, out: str, seed: int,
                 threads: int) -> int:
    ensemble = _load_deviation_summary(out, config)
    paths = _load_paths(out, config)
    report = compare_fclt(ensemble, paths, probes=config.probe_times())
    io.write_report(os.path.join(out, "compare_report.json"),
                    report.to_dict(), fingerprint=config.fingerprint(),
                    seed=seed)
    _print_report(report)
    return 0 if report.all_pass else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "flln": _cmd_flln,
    "fclt": _cmd_fclt,
    "ensemble": _cmd_ensemble,
    "verify": _cmd_verify,
    "compare": _cmd_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="epiwane",
        description=("exact epidemic simulation with varying infectivity and "
                     "waning immunity, its deterministic and Gaussian limits, "
                     "and statistical verification"))
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment file")
    parser.add_argument("--out", default=None,
                        help="artifact directory (default: config output_dir)")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (default: config seed)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: logical cores)")
    args = parser.parse_args(argv)

    level = os.environ.get("EPIWANE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        config = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        return _fail(str(exc))
    out = args.out if args.out is not None else config.output_dir
    seed = args.seed if args.seed is not None else config.seed
    if seed < 0:
        return _fail("--seed must be a nonnegative 64-bit integer")
    threads = args.threads if args.threads is not None else os.cpu_count() or 1
    if threads < 1:
        return _fail("--threads must be at least 1")
    os.makedirs(out, exist_ok=True)

    try:
        return _COMMANDS[args.command](config, out, seed, threads)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
