"""Gaussian fluctuations of the finite population around its limit.

On the central-limit scale, sqrt(N) times the deviation of the empirical
curves from the deterministic limit converges to the solution of a linear
stochastic Volterra system.  The randomness enters only through four centered
Gaussian driver processes (jhat, mhat, jhat1, mhat1): the fluctuation limits
of the per-individual susceptibility, infectivity, uninfected-indicator and
infected-indicator functionals of one mean-field agent.  Given a driver path,
the fluctuation curves solve

    shat(t) = jhat(t) - int_0^t Gamma0Pair(t, s) fhat(s) ds
              - int_0^t [int_0^r GammaPair(t, s, r) fbar(s) sbar(s) ds] fhat(r) dr
              + int_0^t GammaSurv(t, s) b(s) ds
    fhat(t) = mhat(t) + int_0^t lambar(t - s) b(s) ds

with the common coupling term b = (shat - jhat) fbar + sbar fhat, and the
compartment fluctuations (uhat, ihat) follow by direct quadrature of the
analogous equations with indicator-weighted kernels and drivers
(jhat1, mhat1).  By default the same b drives all four equations; with
``corollary_literal=True`` the uhat equation instead uses
b1 = (shat - jhat1) fbar + sbar fhat, swapping its own driver into the
coupling term.  Both variants agree when jhat and jhat1 coincide.

The module provides the three stages:

``estimate_driver_covariance``
    Monte-Carlo estimate of the joint 4G x 4G driver covariance from
    independent mean-field agents (one agent = one joint draw of all four
    functionals on the grid), with per-entry standard errors.
``sample_driver``
    One jointly-Gaussian driver path via a cached Cholesky factor, with
    escalating diagonal jitter to absorb the exact linear dependencies of
    the sample covariance (e.g. uninfected + infected = 1).
``solve_fluctuation_path``
    Forward time-marching of the trapezoid-discretized system.  At each grid
    index the Volterra integrals split into known history plus the diagonal
    cell, leaving a well-conditioned 2x2 linear solve for (shat, fhat);
    (uhat, ihat) are then single quadratures.  The scheme solves the
    discretized equations exactly, which an a-posteriori residual recompute
    verifies against the 10*dt^2 consistency bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .flln import LimitSolution
from .grid import Grid, check_gridded
from .kernels import KernelWorkspace
from .profiles import (
    GammaDuration,
    InitialLaw,
    ProfileLaw,
    duration_cdf,
    mean_infectivity,
)
from .simulator import _ForceInterp, _simulate_agent_events, agent_functionals

__all__ = [
    "CovarianceModel",
    "DriverSample",
    "FluctuationPath",
    "estimate_driver_covariance",
    "sample_driver",
    "solve_fluctuation_path",
    "solve_fluctuation_ensemble",
]

MIN_COVARIANCE_AGENTS = 100
_JITTERS = (1e-12, 1e-10, 1e-8)
_DET_FLOOR = 1e-8
_BLOCKS = ("jhat", "mhat", "jhat1", "mhat1")


def _require_same_grid(grid: Grid, other: Grid, what: str):
    if other != grid:
        raise ValueError(
            f"grid mismatch: {what} uses dt={other.dt:g} with {other.n} nodes, "
            f"expected dt={grid.dt:g} with {grid.n} nodes"
        )


@dataclass
class CovarianceModel:
    """Joint covariance of the stacked driver vector on the grid.

    ``matrix`` is 4G x 4G over the stacked blocks (jhat, mhat, jhat1, mhat1),
    each of length G = grid.n; ``se`` holds the per-entry moment-based
    standard errors of the estimate.  The Cholesky factor is computed lazily
    and cached, so repeated sampling pays the factorization once.
    """

    grid: Grid
    matrix: np.ndarray
    se: np.ndarray
    m_samples: int
    seed: int
    _factor: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = 4 * self.grid.n
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.se = np.asarray(self.se, dtype=float)
        if self.matrix.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {self.matrix.shape}")
        if self.se.shape != (d, d):
            raise ValueError(f"standard errors must be {d}x{d}, got {self.se.shape}")

    def block(self, row: str, col: str) -> np.ndarray:
        """One G x G cross-covariance block by driver name."""
        n = self.grid.n
        i, j = _BLOCKS.index(row), _BLOCKS.index(col)
        return self.matrix[i * n:(i + 1) * n, j * n:(j + 1) * n]

    def cholesky_factor(self) -> np.ndarray:
        """Lower factor of the jitter-regularized covariance (cached)."""
        if self._factor is None:
            sym = 0.5 * (self.matrix + self.matrix.T)
            eye = np.eye(sym.shape[0])
            for jitter in _JITTERS:
                try:
                    self._factor = np.linalg.cholesky(sym + jitter * eye)
                    break
                except np.linalg.LinAlgError:
                    continue
            else:
                smallest = float(np.linalg.eigvalsh(sym)[0])
                raise RuntimeError(
                    f"covariance is not positive semidefinite at jitter "
                    f"{_JITTERS[-1]:g}; smallest eigenvalue {smallest:.3e}"
                )
        return self._factor


@dataclass
class DriverSample:
    """One jointly-Gaussian draw of the four driver paths."""

    grid: Grid
    jhat: np.ndarray
    mhat: np.ndarray
    jhat1: np.ndarray
    mhat1: np.ndarray
    seed: int

    def __post_init__(self):
        for name in _BLOCKS:
            setattr(self, name, check_gridded(self.grid, getattr(self, name), name))


@dataclass
class FluctuationPath:
    """Solved fluctuation curves for one driver path.

    ``residual`` is the sup-norm defect of the discretized (shat, fhat)
    equations recomputed from whole-grid quadratures after the march; the
    (uhat, ihat) curves are themselves direct quadratures, so they carry no
    independent defect.
    """

    grid: Grid
    shat: np.ndarray
    fhat: np.ndarray
    uhat: np.ndarray
    ihat: np.ndarray
    residual: float


def estimate_driver_covariance(law: ProfileLaw, init: InitialLaw,
                               flln: LimitSolution, m: int, grid: Grid,
                               seed: int) -> CovarianceModel:
    """Estimate the joint driver covariance from m mean-field agents.

    Each agent is simulated by thinning against the deterministic limit force
    and contributes one joint sample of the stacked functional vector
    (gamma, lambda, uninfected, infected) on the grid.  Returns the unbiased
    sample covariance together with per-entry standard errors from the
    fourth-moment estimator.
    """
    if m < MIN_COVARIANCE_AGENTS:
        raise ValueError(
            f"covariance estimation needs at least {MIN_COVARIANCE_AGENTS} "
            f"agents, got {m}"
        )
    _require_same_grid(grid, flln.grid, "limit solution")
    n = grid.n
    force = _ForceInterp(flln)
    horizon = grid.horizon
    data = np.empty((m, 4 * n))
    for k in range(m):
        history = _simulate_agent_events(law, init, force, seed, k, horizon)
        gam, lam, inf, uninf = agent_functionals(history, grid)
        data[k, 0 * n:1 * n] = gam
        data[k, 1 * n:2 * n] = lam
        data[k, 2 * n:3 * n] = uninf
        data[k, 3 * n:4 * n] = inf
    data -= data.mean(axis=0)
    cov = data.T @ data / (m - 1)
    cov = 0.5 * (cov + cov.T)
    # se_ij^2 = (E[d_i^2 d_j^2] - E[d_i d_j]^2) / m around the biased moment
    biased = cov * ((m - 1) / m)
    data *= data
    q = data.T @ data / m
    se = np.sqrt(np.clip(q - biased * biased, 0.0, None) / m)
    return CovarianceModel(grid=grid, matrix=cov, se=se, m_samples=m, seed=seed)


def sample_driver(cov: CovarianceModel, seed: int) -> DriverSample:
    """Draw one joint Gaussian driver path; deterministic given the seed."""
    n = cov.grid.n
    if not cov.matrix.any():
        x = np.zeros(4 * n)
    else:
        z = np.random.default_rng(seed).standard_normal(4 * n)
        x = cov.cholesky_factor() @ z
    return DriverSample(grid=cov.grid, jhat=x[:n], mhat=x[n:2 * n],
                        jhat1=x[2 * n:3 * n], mhat1=x[3 * n:], seed=seed)


def _trapezoid_weights(n: int, dt: float) -> np.ndarray:
    """Row i holds the trapezoid weights on [0, t_i]: dt*(1/2, 1, .., 1, 1/2)."""
    w = np.tril(np.full((n, n), dt))
    w[:, 0] = 0.5 * dt
    np.fill_diagonal(w, 0.5 * dt)
    w[0, 0] = 0.0
    return w


def _lower_toeplitz(vec: np.ndarray) -> np.ndarray:
    idx = np.arange(len(vec))
    lag = idx[:, None] - idx[None, :]
    return np.where(lag >= 0, vec[np.abs(lag)], 0.0)


class _SystemTables:
    """Weighted quadrature tables of the fluctuation system on one grid.

    Every integral operator is stored as a dense lower-triangular matrix that
    already includes its trapezoid weights, so a whole-grid application is
    one matrix product and the marching step only needs matrix rows.
    """

    def __init__(self, law: ProfileLaw, init: InitialLaw, flln: LimitSolution,
                 grid: Grid, *, backend: str = "auto", mc_samples: int = 256,
                 mc_seed: int = 0):
        _require_same_grid(grid, flln.grid, "limit solution")
        self.grid = grid
        self.fbar = flln.fbar
        self.sbar = flln.sbar
        n, dt = grid.n, grid.dt
        if (backend == "auto" and law.family == "sis_gradual"
                and isinstance(law.duration, GammaDuration)):
            # triple kernels for this family have no semi-analytic form
            backend = "mc"
        ws = KernelWorkspace(law, flln.fbar, grid, backend=backend,
                             mc_samples=mc_samples, seed=mc_seed)
        ws0 = KernelWorkspace(init, flln.fbar, grid, backend=backend,
                              mc_samples=mc_samples, seed=mc_seed)
        sf = flln.fbar * flln.sbar
        w = _trapezoid_weights(n, dt)
        # shat equation: - (initial pair + contracted triple) against fhat,
        # + plain susceptibility kernel against the coupling term
        self.w_f = w * (ws0.initial_pair_table("gamma0_pair_surv")
                        + ws.contracted_triple("gamma_pair_surv", sf))
        self.w_b = w * ws.pair_table("gamma_surv")
        # uhat analogue with indicator-weighted kernels
        self.w_fu = w * (ws0.initial_pair_table("ind0_gamma_surv")
                         + ws.contracted_triple("ind_gamma_surv", sf))
        self.w_bu = w * ws.pair_table("ind_surv")
        # fhat / ihat convolution kernels
        lam = mean_infectivity(law, grid.times, mc_samples, mc_seed)
        fc = 1.0 - duration_cdf(law, grid.times, mc_samples, mc_seed)
        self.w_l = w * _lower_toeplitz(lam)
        self.w_fc = w * _lower_toeplitz(fc)
        # path-independent 2x2 step systems: unknown coefficients live on the
        # weighted diagonals
        a_ss = np.diagonal(self.w_b) * self.fbar
        a_sf = -np.diagonal(self.w_f) + np.diagonal(self.w_b) * self.sbar
        c = np.diagonal(self.w_l)
        det = (1.0 - a_ss) * (1.0 - c * self.sbar) - a_sf * c * self.fbar
        if np.min(np.abs(det[1:]), initial=1.0) < _DET_FLOOR:
            worst = int(np.argmin(np.abs(det[1:]))) + 1
            raise RuntimeError(
                f"singular 2x2 step system at t={grid.times[worst]:g} "
                f"(det={det[worst]:.3e}); refine dt"
            )
        self.a_ss, self.a_sf, self.c, self.det = a_ss, a_sf, c, det

    def march(self, jh: np.ndarray, mh: np.ndarray):
        """Solve the (shat, fhat) pair for stacked drivers of shape (n, P)."""
        fbar, sbar = self.fbar, self.sbar
        a_ss, a_sf, c, det = self.a_ss, self.a_sf, self.c, self.det
        n = self.grid.n
        s = np.empty_like(jh)
        f = np.empty_like(jh)
        b = np.empty_like(jh)
        s[0] = jh[0]
        f[0] = mh[0]
        b[0] = (s[0] - jh[0]) * fbar[0] + sbar[0] * f[0]
        for i in range(1, n):
            pf = self.w_f[i, :i] @ f[:i]
            pb = self.w_b[i, :i] @ b[:i]
            pl = self.w_l[i, :i] @ b[:i]
            rs = (1.0 - a_ss[i]) * jh[i] - pf + pb
            rf = mh[i] + pl - c[i] * fbar[i] * jh[i]
            s[i] = ((1.0 - c[i] * sbar[i]) * rs + a_sf[i] * rf) / det[i]
            f[i] = (c[i] * fbar[i] * rs + (1.0 - a_ss[i]) * rf) / det[i]
            b[i] = (s[i] - jh[i]) * fbar[i] + sbar[i] * f[i]
        return s, f, b

    def finish(self, s, f, b, jh, mh, jh1, mh1, corollary_literal: bool):
        """(uhat, ihat) quadratures and the per-path equation residuals."""
        if corollary_literal:
            b_u = b + (jh - jh1) * self.fbar[:, None]
        else:
            b_u = b
        u = jh1 - self.w_fu @ f + self.w_bu @ b_u
        ih = self.w_fc @ b + mh1
        res_s = np.max(np.abs(s - (jh - self.w_f @ f + self.w_b @ b)), axis=0)
        res_f = np.max(np.abs(f - (self.w_l @ b + mh)), axis=0)
        return u, ih, np.maximum(res_s, res_f)


def solve_fluctuation_ensemble(drivers: Sequence[DriverSample],
                               flln: LimitSolution, law: ProfileLaw,
                               init: InitialLaw, grid: Grid, *,
                               corollary_literal: bool = False,
                               backend: str = "auto", mc_samples: int = 256,
                               mc_seed: int = 0) -> List[FluctuationPath]:
    """Solve the fluctuation system for many drivers with shared tables.

    The kernel quadrature tables are built once; the march then batches all
    paths through per-step matrix-vector products, so the cost is one table
    build plus O(P * n^2) arithmetic for P paths on n nodes.
    """
    if not drivers:
        return []
    for d in drivers:
        _require_same_grid(grid, d.grid, "driver sample")
    tables = _SystemTables(law, init, flln, grid, backend=backend,
                           mc_samples=mc_samples, mc_seed=mc_seed)
    jh = np.stack([d.jhat for d in drivers], axis=1)
    mh = np.stack([d.mhat for d in drivers], axis=1)
    jh1 = np.stack([d.jhat1 for d in drivers], axis=1)
    mh1 = np.stack([d.mhat1 for d in drivers], axis=1)
    s, f, b = tables.march(jh, mh)
    u, ih, res = tables.finish(s, f, b, jh, mh, jh1, mh1, corollary_literal)
    bound = 10.0 * grid.dt ** 2
    worst = float(np.max(res))
    if worst > bound:
        raise RuntimeError(
            f"a-posteriori residual {worst:.3e} exceeds the consistency "
            f"bound {bound:.3e}; the marching and quadrature disagree"
        )
    return [
        FluctuationPath(grid=grid, shat=s[:, p].copy(), fhat=f[:, p].copy(),
                        uhat=u[:, p].copy(), ihat=ih[:, p].copy(),
                        residual=float(res[p]))
        for p in range(len(drivers))
    ]


def solve_fluctuation_path(driver: DriverSample, flln: LimitSolution,
                           law: ProfileLaw, init: InitialLaw, grid: Grid, *,
                           corollary_literal: bool = False,
                           backend: str = "auto", mc_samples: int = 256,
                           mc_seed: int = 0) -> FluctuationPath:
    """Solve the linear stochastic Volterra system for one driver path.

    Forward time-marching: at grid index i every Volterra integral over
    [0, t_i] is a trapezoid sum whose only unknowns sit in the diagonal cell,
    leaving an exactly-solvable 2x2 system for (shat(t_i), fhat(t_i)); the
    compartment fluctuations follow by direct quadrature.  The map from
    driver to path is linear, and shat(0) = jhat(0), fhat(0) = mhat(0) hold
    exactly.
    """
    return solve_fluctuation_ensemble(
        [driver], flln, law, init, grid, corollary_literal=corollary_literal,
        backend=backend, mc_samples=mc_samples, mc_seed=mc_seed)[0]
