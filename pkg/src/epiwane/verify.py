"""Statistical verification of simulation output against the limit models.

Three comparisons are supported.  ``run_ensemble`` simulates many independent
populations and summarizes the empirical curves together with their scaled
deviations sqrt(N) (empirical - limit).  ``fit_convergence_rate`` regresses
log error on log population size and reports the decay exponent, which should
sit near -1/2.  ``compare_fclt`` matches the ensemble deviations against
sampled paths of the Gaussian fluctuation model: marginal variances at probe
times, covariance across time lags, and Kolmogorov-Smirnov tests on the
marginal laws.  ``check_coupling_bounds`` asserts the mean-field coupling
error bound on diagnostics from a coupled simulation.

All checks produce ``MetricRecord`` rows collected in a ``Report`` whose
``to_dict`` form is the JSON written by the command line.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .fclt import FluctuationPath
from .flln import LimitSolution, solve_flln
from .grid import Grid
from .profiles import ProfileLaw
from .simulator import CouplingDiagnostics, simulate_population
from .streams import derive_seed

__all__ = ["QUANTITIES", "EnsembleSummary", "MetricRecord", "KsRecord",
           "RateFit", "Report", "run_ensemble", "fit_convergence_rate",
           "compare_fclt", "check_coupling_bounds"]

# ensemble quantity name -> fluctuation-path field carrying its limit
QUANTITIES = ("fbar", "sbar", "infected", "uninfected")
_FCLT_FIELD = {"fbar": "fhat", "sbar": "shat",
               "infected": "ihat", "uninfected": "uhat"}
DEFAULT_VAR_TOL = 0.2
DEFAULT_KS_ALPHA = 1e-3


@dataclass
class MetricRecord:
    """One checked quantity: value against target within tol."""

    name: str
    target: float
    value: float
    tol: float
    passed: bool
    paper_ref: str

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "target": self.target, "value": self.value,
                "tol": self.tol, "pass": self.passed,
                "paper_ref": self.paper_ref}


@dataclass
class KsRecord:
    name: str
    statistic: float
    pvalue: float
    alpha: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "statistic": self.statistic,
                "pvalue": self.pvalue, "alpha": self.alpha,
                "pass": self.passed}


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> Dict[str, float]:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared}


@dataclass
class Report:
    metrics: List[MetricRecord] = field(default_factory=list)
    rate_fit: Optional[RateFit] = None
    ks: List[KsRecord] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return (all(m.passed for m in self.metrics)
                and all(k.passed for k in self.ks))

    def merge(self, other: "Report") -> "Report":
        if other.rate_fit is not None:
            if self.rate_fit is not None:
                raise ValueError("both reports carry a rate fit")
            self.rate_fit = other.rate_fit
        self.metrics.extend(other.metrics)
        self.ks.extend(other.ks)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metrics": [m.to_dict() for m in self.metrics],
            "rate_fit": None if self.rate_fit is None else self.rate_fit.to_dict(),
            "ks": [k.to_dict() for k in self.ks],
            "all_pass": self.all_pass,
        }


@dataclass
class EnsembleSummary:
    """Summary of M independent populations of size N on one grid.

    ``mean`` and ``var`` hold the empirical curves' pointwise mean and
    unbiased variance; ``var`` and ``cross_cov`` are None when M == 1.
    ``deviations[q]`` is the (M, grid.n) matrix of scaled deviations
    sqrt(N) (empirical - limit), the objects the fluctuation model predicts.
    ``cross_cov[a, b, g]`` is the equal-time covariance between the scaled
    deviations of quantities a and b (ordered as QUANTITIES).
    """

    fingerprint: str
    n: int
    m: int
    grid: Grid
    flln: LimitSolution
    mean: Dict[str, np.ndarray]
    var: Optional[Dict[str, np.ndarray]]
    deviations: Dict[str, np.ndarray]
    cross_cov: Optional[np.ndarray]


def _replicate(law, init, n, grid, bernoulli, seed: int):
    traj = simulate_population(law, init, n, grid, seed,
                               bernoulli_init=bernoulli, record_events=False)
    # counts -> per-capita fractions, the objects the limit theorems describe
    return (traj.fbar, traj.sbar, traj.infected / n, traj.uninfected / n)


def run_ensemble(config: ExperimentConfig, n: int, m: int, seed: int, *,
                 threads: int = 1) -> EnsembleSummary:
    """Simulate m populations of size n and summarize their curves.

    Replicate seeds derive from the master seed by index, and aggregation
    runs in replicate order, so the summary does not depend on ``threads``.
    """
    if n < 2:
        raise ValueError(f"population size must be at least 2, got {n}")
    if m < 1:
        raise ValueError(f"need at least one replicate, got {m}")
    law = config.law()
    init = config.initial_law()
    grid = config.grid()
    flln = solve_flln(law, init, grid, tol=config.tol)
    limits = {"fbar": flln.fbar, "sbar": flln.sbar,
              "infected": flln.ibar, "uninfected": flln.ubar}

    curves = {q: np.empty((m, grid.n)) for q in QUANTITIES}
    seeds = [derive_seed(seed, k, -1) for k in range(m)]
    worker = partial(_replicate, law, init, n, grid, config.bernoulli_init)
    if threads > 1 and m > 1:
        chunk = max(1, m // (threads * 4))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(worker, seeds, chunksize=chunk))
    else:
        results = [worker(s) for s in seeds]
    for k, row in enumerate(results):
        for q, values in zip(QUANTITIES, row):
            curves[q][k] = values

    root_n = np.sqrt(float(n))
    deviations = {q: root_n * (curves[q] - limits[q]) for q in QUANTITIES}
    mean = {q: curves[q].mean(axis=0) for q in QUANTITIES}
    if m > 1:
        var = {q: curves[q].var(axis=0, ddof=1) for q in QUANTITIES}
        stacked = np.stack([deviations[q] - deviations[q].mean(axis=0)
                            for q in QUANTITIES])
        cross = np.einsum("amg,bmg->abg", stacked, stacked) / (m - 1)
    else:
        var = None
        cross = None
    return EnsembleSummary(fingerprint=config.fingerprint(), n=n, m=m,
                           grid=grid, flln=flln, mean=mean, var=var,
                           deviations=deviations, cross_cov=cross)


def fit_convergence_rate(sizes: Sequence[int],
                         errors: Sequence[float]) -> RateFit:
    """Least-squares slope of log error against log population size."""
    sizes_arr = np.asarray(sizes, dtype=float)
    errors_arr = np.asarray(errors, dtype=float)
    if sizes_arr.shape != errors_arr.shape or sizes_arr.ndim != 1:
        raise ValueError("sizes and errors must be 1-D of equal length")
    if sizes_arr.size < 3:
        raise ValueError(f"need at least 3 population sizes, got {sizes_arr.size}")
    if np.any(errors_arr <= 0):
        raise ValueError("errors must be positive to fit a log-log rate")
    x = np.log(sizes_arr)
    y = np.log(errors_arr)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 if total == 0 else 1.0 - np.sum(resid ** 2) / total
    return RateFit(float(slope), float(intercept), float(r_squared))


def _probe_index(grid: Grid, t: float) -> int:
    idx = int(round(t / grid.dt))
    if not 0 <= idx < grid.n or abs(idx * grid.dt - t) > 1e-9 * (1.0 + abs(t)):
        raise ValueError(f"probe time {t} is not on the grid (dt={grid.dt}, "
                         f"horizon={grid.horizon})")
    return idx


def _cov_se(a: np.ndarray, b: np.ndarray) -> float:
    # large-sample standard error of a sample covariance
    m = a.shape[0]
    va = a.var(ddof=1) if m > 1 else 0.0
    vb = b.var(ddof=1) if m > 1 else 0.0
    cab = np.cov(a, b, ddof=1)[0, 1] if m > 1 else 0.0
    return float(np.sqrt(max(va * vb + cab * cab, 0.0) / max(m - 1, 1)))


def compare_fclt(ensemble: EnsembleSummary, paths: Sequence[FluctuationPath],
                 probes: Optional[Sequence[float]] = None, *,
                 var_tol: float = DEFAULT_VAR_TOL,
                 ks_alpha: float = DEFAULT_KS_ALPHA) -> Report:
    """Match ensemble deviations against fluctuation-model sample paths.

    Checks, per quantity: relative error of the deviation variance at each
    probe time, covariance between the first and last probes, and a
    two-sample Kolmogorov-Smirnov test on the probe marginals.  Raises
    ValueError if the two inputs live on different grids or the ensemble
    has fewer than two replicates.
    """
    if not paths:
        raise ValueError("need at least one fluctuation path")
    if ensemble.m < 2:
        raise ValueError("ensemble variance comparison needs at least 2 replicates")
    grid = ensemble.grid
    for path in paths:
        if grid != path.grid:
            raise ValueError(
                f"grid mismatch: fluctuation paths use dt={path.grid.dt}, "
                f"n={path.grid.n}, ensemble uses dt={grid.dt}, n={grid.n}")
    if probes is None:
        # quartiles of the horizon, snapped to the grid
        probes = tuple(round((grid.n - 1) * q / 4) * grid.dt
                       for q in (1, 2, 3, 4))
    idxs = [_probe_index(grid, t) for t in probes]

    model = {q: np.stack([getattr(p, _FCLT_FIELD[q]) for p in paths])
             for q in QUANTITIES}
    report = Report()
    n_pop = ensemble.n
    for q in QUANTITIES:
        dev = ensemble.deviations[q]
        for t, idx in zip(probes, idxs):
            emp = dev[:, idx]
            mod = model[q][:, idx]
            var_emp = float(emp.var(ddof=1))
            var_mod = float(mod.var(ddof=1)) if mod.shape[0] > 1 else 0.0
            if var_mod > 0:
                rel = abs(var_emp - var_mod) / var_mod
            else:
                rel = abs(var_emp)
            report.metrics.append(MetricRecord(
                name=f"var[{q}](t={t:g})", target=var_mod, value=var_emp,
                tol=var_tol, passed=bool(rel <= var_tol),
                paper_ref=(f"variance of sqrt(N) deviations of {q} converges "
                           f"to the variance of the Gaussian limit "
                           f"{_FCLT_FIELD[q]} as N grows")))
            ks = stats.ks_2samp(emp, mod)
            report.ks.append(KsRecord(
                name=f"ks[{q}](t={t:g})", statistic=float(ks.statistic),
                pvalue=float(ks.pvalue), alpha=ks_alpha,
                passed=bool(ks.pvalue >= ks_alpha)))
        # covariance across the outermost time lag
        first, last = idxs[0], idxs[-1]
        if first != last:
            cov_emp = float(np.cov(dev[:, first], dev[:, last], ddof=1)[0, 1])
            cov_mod = float(np.cov(model[q][:, first], model[q][:, last],
                                   ddof=1)[0, 1])
            allowance = 3.0 * np.hypot(_cov_se(dev[:, first], dev[:, last]),
                                       _cov_se(model[q][:, first],
                                               model[q][:, last]))
            # finite-size bias of the pre-limit ensemble decays like 1/N
            tol = float(allowance + 4.0 / n_pop)
            report.metrics.append(MetricRecord(
                name=f"lagcov[{q}](t={probes[0]:g},{probes[-1]:g})",
                target=cov_mod, value=cov_emp, tol=tol,
                passed=bool(abs(cov_emp - cov_mod) <= tol),
                paper_ref=(f"covariance of the {q} deviations across two "
                           "times converges to that of the Gaussian limit "
                           "process")))
    return report


def check_coupling_bounds(diag: CouplingDiagnostics, law: ProfileLaw,
                          horizon: float, *, n: Optional[int] = None) -> Report:
    """Check the mean-field or quarantine error bounds on diagnostics.

    For a mean-field coupling run, the mean over individuals of
    sup_t |A_k^N(t) - A_k(t)| must stay below
    lambda_star T exp(2 lambda_star T) / sqrt(N).  The bound grows fast in
    T, so it is only informative for lambda_star * T of order one.

    For a quarantine run (pass the population size as ``n``), the trajectory
    gaps must stay below the diverged-set bounds at every grid point:
    |force gap| <= lambda_star |D(t)| / N, |susceptibility gap| <= |D(t)| / N.
    """
    lam = law.lambda_star
    report = Report()
    if diag.sup_diff is not None:
        n_agents = len(diag.sup_diff)
        if n_agents == 0:
            raise ValueError("diagnostics carry no coupled individuals")
        bound = lam * horizon * np.exp(2.0 * lam * horizon) / np.sqrt(float(n_agents))
        report.metrics.append(MetricRecord(
            name="coupling.sup_diff_mean", target=float(bound),
            value=float(diag.sup_diff_mean), tol=0.0,
            passed=bool(diag.sup_diff_mean <= bound),
            paper_ref=("mean over individuals of sup_t |A_k^N(t) - A_k(t)| "
                       "is at most lambda_star T exp(2 lambda_star T) / "
                       "sqrt(N)")))
    if diag.force_gap is not None:
        if n is None:
            raise ValueError("quarantine bound checks need the population "
                             "size n")
        dset = diag.diverged_count / float(n)
        # worst signed violation across the grid; <= 0 means the bound holds
        force_excess = float(np.max(diag.force_gap - lam * dset))
        sus_excess = float(np.max(diag.susceptibility_gap - dset))
        report.metrics.append(MetricRecord(
            name="quarantine.force_gap", target=0.0, value=force_excess,
            tol=1e-12, passed=bool(force_excess <= 1e-12),
            paper_ref=("withholding a quarantined set's infectivity moves "
                       "the aggregate force by at most lambda_star |D(t)|/N "
                       "at every time")))
        report.metrics.append(MetricRecord(
            name="quarantine.susceptibility_gap", target=0.0,
            value=sus_excess, tol=1e-12, passed=bool(sus_excess <= 1e-12),
            paper_ref=("withholding a quarantined set's infectivity moves "
                       "the aggregate susceptibility by at most |D(t)|/N at "
                       "every time")))
    if not report.metrics:
        raise ValueError("diagnostics carry neither coupling nor quarantine "
                         "fields")
    return report
