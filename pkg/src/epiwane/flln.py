"""Deterministic large-population limit of the epidemic.

As the population grows, the mean susceptibility sbar, force of infection
fbar, uninfected fraction ubar and infected fraction ibar converge to the
solution of a nonlinear Volterra system driven by the profile-law expectation
kernels:

    sbar(t) = Gamma0Surv(t)   + int_0^t GammaSurv(t, s) sbar(s) fbar(s) ds
    fbar(t) = p * lam0bar(t)  + int_0^t lambar(t - s)   sbar(s) fbar(s) ds
    ubar(t) = Ind0Surv(t)     + int_0^t IndSurv(t, s)   sbar(s) fbar(s) ds
    ibar(t) = p * F0c(t)      + int_0^t Fc(t - s)       sbar(s) fbar(s) ds

with lam0bar / F0c the mean infectivity and duration survival of the
initially-infected profile law and p the initial infected fraction.  The
kernels themselves depend on fbar, so the system is solved by whole-grid
Picard iteration: rebuild the kernel tables from the current iterate,
re-evaluate both right-hand sides, clip to the invariant boxes
(0 <= sbar <= 1, 0 <= fbar <= lambda_star) and repeat to a sup-norm
tolerance.  The compartments (ubar, ibar) are then single quadratures of the
converged pair.

``solve_markovian_ode`` provides the independent closed-form check: for
SisIndicator with exponential durations the limit collapses to the classical
SIS ODE di/dt = lambda*i*(1-i) - mu*i with fbar = lambda*ibar and
sbar = ubar = 1 - ibar.

Discretization is second order in dt for duration laws with densities;
deterministic durations put jumps in the convolution kernels and cost one
order locally at the jump-aligned cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import logging

import numpy as np

from .grid import Grid, check_gridded, conv_contract
from .kernels import KernelWorkspace
from .profiles import InitialLaw, ProfileLaw, duration_cdf, mean_infectivity

__all__ = ["LimitSolution", "solve_flln", "derive_compartments",
           "solve_markovian_ode", "FllnConvergenceError"]

log = logging.getLogger("epiwane.flln")


class FllnConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float, tol: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"limit solver did not reach tol={tol:g} after {iterations} "
            f"iterations (residual {residual:.3e})"
        )


@dataclass
class LimitSolution:
    grid: Grid
    sbar: np.ndarray
    fbar: np.ndarray
    ubar: np.ndarray
    ibar: np.ndarray
    iterations: int
    residual: float

    @classmethod
    def constant_force(cls, grid: Grid, force: float) -> "LimitSolution":
        """A degenerate solution object carrying a constant force of
        infection; used to drive auxiliary agents in stationarity studies."""
        c = np.full(grid.n, float(force))
        z = np.zeros(grid.n)
        return cls(grid, np.ones(grid.n), c, z.copy(), z.copy(), 0, 0.0)


def solve_flln(law: ProfileLaw, init: InitialLaw, grid: Grid, *,
               tol: float = 1e-10, max_iter: int = 200,
               backend: str = "auto", mc_samples: int = 256,
               mc_seed: int = 0) -> LimitSolution:
    """Solve the limit Volterra system on the grid by Picard iteration.

    Raises FllnConvergenceError if the sup-norm update is still above ``tol``
    after ``max_iter`` sweeps.  With the Monte-Carlo kernel backend the same
    common-random-number sample set is reused every sweep, so the fixed-point
    map itself is deterministic.
    """
    p = init.p_infected
    times = grid.times
    lam0 = mean_infectivity(init.profile, times, mc_samples, mc_seed)
    lam = mean_infectivity(law, times, mc_samples, mc_seed)
    lam_star = law.lambda_star

    fbar = p * lam0
    ws0 = KernelWorkspace(init, np.zeros(grid.n), grid, backend=backend,
                          mc_samples=mc_samples, seed=mc_seed)
    sbar = ws0.initial_vector("gamma0_surv")  # E[gamma0(t)]: survival-free start
    delta = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        ws = KernelWorkspace(init, fbar, grid, backend=backend,
                             mc_samples=mc_samples, seed=mc_seed)
        sf = sbar * fbar
        s_new = ws.initial_vector("gamma0_surv") + ws.contract_pair("gamma_surv", sf)
        f_new = p * lam0 + conv_contract(lam, sf, grid.dt)
        np.clip(s_new, 0.0, 1.0, out=s_new)
        np.clip(f_new, 0.0, lam_star, out=f_new)
        delta = max(np.max(np.abs(s_new - sbar)), np.max(np.abs(f_new - fbar)))
        sbar, fbar = s_new, f_new
        log.debug("picard sweep %d: delta=%.3e", iterations, delta)
        if delta < tol:
            break
    else:
        raise FllnConvergenceError(max_iter, delta, tol)

    ubar, ibar = derive_compartments(law, init, grid, sbar, fbar,
                                     backend=backend, mc_samples=mc_samples,
                                     mc_seed=mc_seed)
    return LimitSolution(grid=grid, sbar=sbar, fbar=fbar, ubar=ubar, ibar=ibar,
                         iterations=iterations, residual=float(delta))


def derive_compartments(law: ProfileLaw, init: InitialLaw, grid: Grid,
                        sbar: np.ndarray, fbar: np.ndarray, *,
                        backend: str = "auto", mc_samples: int = 256,
                        mc_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uninfected/infected fractions from a converged (sbar, fbar) pair."""
    sbar = check_gridded(grid, sbar, "sbar")
    fbar = check_gridded(grid, fbar, "fbar")
    p = init.p_infected
    times = grid.times
    ws = KernelWorkspace(init, fbar, grid, backend=backend,
                         mc_samples=mc_samples, seed=mc_seed)
    sf = sbar * fbar
    ubar = ws.initial_vector("ind0_surv") + ws.contract_pair("ind_surv", sf)
    fc = 1.0 - duration_cdf(law, times, mc_samples, mc_seed)
    f0c = 1.0 - duration_cdf(init.profile, times, mc_samples, mc_seed)
    ibar = p * f0c + conv_contract(fc, sf, grid.dt)
    return ubar, ibar


def solve_markovian_ode(lambda_base: float, mu: float, p: float,
                        grid: Grid) -> LimitSolution:
    """Classical SIS ODE reference: di/dt = lambda*i*(1-i) - mu*i, RK4.

    Matches the Volterra limit for SisIndicator profiles with Exponential(mu)
    durations; fbar = lambda*ibar and sbar = ubar = 1 - ibar.
    """
    def rhs(i):
        return lambda_base * i * (1.0 - i) - mu * i

    ibar = np.empty(grid.n)
    ibar[0] = p
    h = grid.dt
    y = p
    for k in range(grid.n - 1):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ibar[k + 1] = y
    ubar = 1.0 - ibar
    return LimitSolution(grid=grid, sbar=ubar.copy(), fbar=lambda_base * ibar,
                         ubar=ubar, ibar=ibar, iterations=grid.n - 1, residual=0.0)
