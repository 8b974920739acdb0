"""Stochastic epidemic models with varying infectivity and waning immunity.

The toolkit has four layers:

* :mod:`epiwane.profiles` / :mod:`epiwane.kernels` — random infectivity and
  susceptibility profiles and the expectation kernels built from them;
* :mod:`epiwane.simulator` — exact event-driven simulation of the
  finite-population model, mean-field auxiliary agents, path-wise couplings
  and the quarantine variant;
* :mod:`epiwane.flln` / :mod:`epiwane.fclt` — the deterministic large-population
  limit (a nonlinear Volterra system) and the Gaussian fluctuation law around
  it (a linear stochastic Volterra system);
* :mod:`epiwane.verify` / :mod:`epiwane.cli` — statistical comparison of the
  three routes and the ``epiwane`` command line.
"""

from .grid import Grid
from .profiles import (
    Deterministic,
    Exponential,
    GammaDuration,
    InitialLaw,
    ProfileLaw,
    ProfileRealization,
    Segments,
    duration_cdf,
    mean_infectivity,
    sample_initial,
    sample_pair,
)
from .kernels import KernelTable, KernelWorkspace, eval_kernel
from .flln import FllnConvergenceError, LimitSolution, solve_flln, solve_markovian_ode
from .simulator import (
    AgentPath,
    CouplingDiagnostics,
    PopulationState,
    Trajectory,
    simulate_auxiliary_agent,
    simulate_coupled,
    simulate_population,
    simulate_quarantine,
)
from .fclt import (
    CovarianceModel,
    DriverSample,
    FluctuationPath,
    estimate_driver_covariance,
    sample_driver,
    solve_fluctuation_ensemble,
    solve_fluctuation_path,
)
from .streams import derive_seed
from .config import (
    ConfigError,
    ExperimentConfig,
    FcltOptions,
    config_from_dict,
    parse_config,
)
from .verify import (
    EnsembleSummary,
    KsRecord,
    MetricRecord,
    RateFit,
    Report,
    check_coupling_bounds,
    compare_fclt,
    fit_convergence_rate,
    run_ensemble,
)

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "ProfileLaw",
    "InitialLaw",
    "ProfileRealization",
    "Segments",
    "Exponential",
    "Deterministic",
    "GammaDuration",
    "sample_pair",
    "sample_initial",
    "mean_infectivity",
    "duration_cdf",
    "eval_kernel",
    "KernelTable",
    "KernelWorkspace",
    "LimitSolution",
    "FllnConvergenceError",
    "solve_flln",
    "solve_markovian_ode",
    "Trajectory",
    "PopulationState",
    "AgentPath",
    "CouplingDiagnostics",
    "simulate_population",
    "simulate_auxiliary_agent",
    "simulate_coupled",
    "simulate_quarantine",
    "CovarianceModel",
    "DriverSample",
    "FluctuationPath",
    "estimate_driver_covariance",
    "sample_driver",
    "solve_fluctuation_path",
    "solve_fluctuation_ensemble",
    "derive_seed",
    "ConfigError",
    "ExperimentConfig",
    "FcltOptions",
    "config_from_dict",
    "parse_config",
    "EnsembleSummary",
    "MetricRecord",
    "KsRecord",
    "RateFit",
    "Report",
    "run_ensemble",
    "compare_fclt",
    "fit_convergence_rate",
    "check_coupling_bounds",
    "__version__",
]
