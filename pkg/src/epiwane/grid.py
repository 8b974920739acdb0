"""Uniform time grids and piecewise representations of gridded functions.

Gridded functions (the force of infection and everything derived from it) are
interpreted as piecewise linear between nodes.  Their running integrals are
then piecewise quadratic and can be evaluated exactly at off-grid points,
which the kernel quadrature relies on: per-cell Gauss rules only see smooth
integrands once the cumulative force is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform grid 0, dt, 2*dt, ..., T with n = T/dt + 1 nodes."""

    dt: float
    n: int
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"grid dt must be positive, got {self.dt}")
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 nodes, got {self.n}")
        object.__setattr__(self, "times", np.arange(self.n) * self.dt)

    @property
    def horizon(self) -> float:
        return (self.n - 1) * self.dt

    @classmethod
    def from_horizon(cls, horizon: float, dt: float) -> "Grid":
        n_cells = horizon / dt
        n_round = round(n_cells)
        if n_round < 1 or abs(n_cells - n_round) > 1e-9 * max(1.0, n_cells):
            raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
        return cls(dt=dt, n=n_round + 1)

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(dt=self.dt / factor, n=(self.n - 1) * factor + 1)


def check_gridded(grid: Grid, values: np.ndarray, name: str = "values") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n,):
        raise ValueError(
            f"{name} has shape {values.shape}, expected ({grid.n},) for this grid"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite entries")
    return values


def trapezoid_cum(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Cumulative integral of a gridded function at the nodes (trapezoid)."""
    out = np.empty(grid.n)
    out[0] = 0.0
    np.cumsum(0.5 * grid.dt * (values[1:] + values[:-1]), out=out[1:])
    return out


class CumForce:
    """Exact running integral C(t) of a piecewise-linear gridded function.

    C is piecewise quadratic; ``at`` evaluates it exactly anywhere in
    [0, horizon], vectorized.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        self.grid = grid
        self.values = check_gridded(grid, values, "fbar")
        self.nodes = trapezoid_cum(grid, self.values)
        self.slopes = np.diff(self.values) / grid.dt

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        dt = self.grid.dt
        idx = np.clip((t / dt).astype(int), 0, self.grid.n - 2)
        d = t - idx * dt
        return self.nodes[idx] + self.values[idx] * d + 0.5 * self.slopes[idx] * d * d

    def value_at(self, t) -> np.ndarray:
        """The underlying piecewise-linear function itself."""
        t = np.asarray(t, dtype=float)
        dt = self.grid.dt
        idx = np.clip((t / dt).astype(int), 0, self.grid.n - 2)
        d = t - idx * dt
        return self.values[idx] + self.slopes[idx] * d


# Nodes/weights of the 3-point Gauss-Legendre rule on [0, 1].
GAUSS3_NODES = np.array(
    [0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0]
)
GAUSS3_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


def tri_contract(table: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid contraction of a lower-triangular kernel table:
    out[i] = sum_{j<=i} w_j K[i, j] g[j] with w = dt*(1/2, 1, ..., 1, 1/2)."""
    out = dt * (table @ g)
    out -= 0.5 * dt * (table[:, 0] * g[0] + np.diagonal(table) * g)
    return out


def conv_contract(offset_kernel: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid contraction of a difference kernel:
    out[i] = sum_{j<=i} w_j K[i-j] g[j]."""
    n = len(g)
    out = dt * np.convolve(offset_kernel, g)[:n]
    out -= 0.5 * dt * (offset_kernel * g[0] + offset_kernel[0] * g)
    return out
