"""Expectation kernels over profile laws with survival discounting.

The deterministic limit and the fluctuation equations both integrate against
kernels of the form

    E[ w(eta) * exp(-integral_s^t gamma(u - s) * fbar(u) du) ]

where the expectation is over one profile realization infected at time s, the
weight w is one of gamma(t-s), gamma(t-s)*gamma(r-s), 1{t-s >= eta} or
1{t-s >= eta}*gamma(r-s), and fbar is a gridded force of infection.  The
``*0``-suffixed kinds are the same objects for the time-0 mixture (never
infected with probability 1-p, infected fresh at 0 otherwise); never-infected
individuals contribute exp(-C(t)) with C the running integral of fbar.

Evaluation strategies
---------------------
semi-analytic (SisIndicator, SisGradual)
    Conditioning on the duration eta reduces every kernel to a 1-d integral in
    the absolute infection-age variable v = s + x over the bounded window
    [s, t].  The integrand involves the exact piecewise-quadratic cumulative
    force C(v) (and, for SisGradual, an exponentially-discounted tail integral
    W(v) computed by an exact backward recursion), so composite per-grid-cell
    3-point Gauss-Legendre quadrature converges at high order; there is no
    distribution tail to truncate.  Exponential durations factorize the
    density as f(v-s) = mu*exp(-mu*v)*exp(mu*s), turning whole tables into
    cumulative sums plus outer products; deterministic durations are pure
    point-mass lookups.  Gamma durations take a per-row path (most accurate
    for shape >= 1; shapes below 1 have an integrable density singularity at 0
    that degrades the cell rule).
monte-carlo (any family; required for PiecewiseConstant)
    Averages the integrand over M profile realizations drawn once per
    (law, seed, M) with common random numbers, so repeated evaluations inside
    a fixed-point iteration see the same sample set.  Survival exponents use
    midpoint quadrature on the grid cells (exact for node-aligned step
    profiles, second order otherwise).

Tables are dense lower-triangular arrays indexed [i, j] for (t_i, s_j),
j <= i; three-argument kernels are triangular lists of per-t_i matrices
indexed [j, l] for s_j <= r_l <= t_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Union

import numpy as np

from .grid import GAUSS3_NODES, GAUSS3_WEIGHTS, CumForce, Grid, check_gridded, tri_contract
from .profiles import (
    Deterministic,
    Exponential,
    GammaDuration,
    InitialLaw,
    ProfileLaw,
    piecewise_samples,
    sample_pair,
)
from .streams import Stream

__all__ = ["KernelTable", "eval_kernel", "KERNEL_KINDS", "KernelWorkspace"]

KERNEL_KINDS = (
    "gamma_surv",
    "ind_surv",
    "gamma_pair_surv",
    "ind_gamma_surv",
    "gamma0_surv",
    "ind0_surv",
    "gamma0_pair_surv",
    "ind0_gamma_surv",
)
_INITIAL_KINDS = tuple(k for k in KERNEL_KINDS if "0" in k)
_TRIPLE_KINDS = ("gamma_pair_surv", "ind_gamma_surv")

# Dense per-t_i matrices for three-argument kernels grow like G^3/3; keep a
# hard cap so an oversized grid fails fast instead of exhausting memory.
MAX_TRIPLE_GRID = 400
_EXP_OVERFLOW_GUARD = 600.0


@dataclass
class KernelTable:
    kind: str
    grid: Grid
    values: Union[np.ndarray, List[np.ndarray]]

    @property
    def is_triple(self) -> bool:
        return isinstance(self.values, list)


def _exp_guard(exponents: np.ndarray):
    m = float(np.max(exponents, initial=0.0))
    if m > _EXP_OVERFLOW_GUARD:
        raise FloatingPointError(
            f"cumulative force reaches {m:.1f}; kernel tables would overflow "
            "(reduce horizon or infectivity scale)"
        )


class _GradualAux:
    """Shared quantities for SisGradual kernels under a fixed fbar.

    W(v) = integral_v^T exp(-theta*(u-v)) fbar(u) du, computed exactly for the
    piecewise-linear fbar by backward recursion, evaluable off-grid.  The
    survival exponent from infection age x = v - s onward is then
    C(t) - C(v) - E(v, t) with E(v, t) = W(v) - exp(-theta*(t-v))*W(t).
    """

    def __init__(self, theta: float, C: CumForce):
        self.theta = theta
        self.C = C
        grid = C.grid
        dt = grid.dt
        th = theta
        e = np.exp(-th * dt)
        a = (1.0 - e) / th
        b = (1.0 - (1.0 + th * dt) * e) / th**2
        cells = C.values[:-1] * a + C.slopes * b
        W = np.zeros(grid.n)
        for j in range(grid.n - 2, -1, -1):
            W[j] = cells[j] + e * W[j + 1]
        self.W = W

    def w_at(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        grid = self.C.grid
        dt = grid.dt
        th = self.theta
        idx = np.clip((v / dt).astype(int), 0, grid.n - 2)
        delta = (idx + 1) * dt - v
        f_v = self.C.value_at(v)
        e = np.exp(-th * delta)
        part = f_v * (1.0 - e) / th + self.C.slopes[idx] * (1.0 - (1.0 + th * delta) * e) / th**2
        return part + e * self.W[idx + 1]


class KernelWorkspace:
    """Kernel evaluator bound to one (law, fbar, grid) triple.

    Builds whatever cumulative machinery the family/duration combination
    allows once, then serves tables and streamed triple-kernel rows.  The
    limit and fluctuation solvers construct one workspace per fixed-point
    iterate / per solve.
    """

    def __init__(self, law, fbar: np.ndarray, grid: Grid, *, backend: str = "auto",
                 mc_samples: int = 256, seed: int = 0):
        if isinstance(law, InitialLaw):
            self.p0 = law.p_infected
            self.law = law.profile
        else:
            self.p0 = None
            self.law = law
        if not isinstance(self.law, ProfileLaw):
            raise TypeError(f"expected ProfileLaw or InitialLaw, got {type(law)!r}")
        self.grid = grid
        self.fbar = check_gridded(grid, fbar, "fbar")
        if np.any(self.fbar < 0):
            raise ValueError("fbar has negative entries")
        if backend == "auto":
            backend = "mc" if self.law.family == "piecewise_constant" else "analytic"
        if backend == "analytic" and self.law.family == "piecewise_constant":
            raise ValueError("piecewise_constant kernels require the mc backend")
        if backend not in ("analytic", "mc"):
            raise ValueError(f"unknown kernel backend {backend!r}")
        self.backend = backend
        self.C = CumForce(grid, self.fbar)
        self.never_surv = np.exp(-self.C.nodes)
        if backend == "analytic":
            self._setup_analytic()
        else:
            self._setup_mc(mc_samples, seed)

    # -- shared cell geometry -----------------------------------------------

    def _cell_nodes(self):
        """Gauss nodes in every grid cell: arrays of shape (n-1, 3)."""
        grid = self.grid
        starts = grid.times[:-1]
        return starts[:, None] + grid.dt * GAUSS3_NODES[None, :]

    # -- semi-analytic machinery --------------------------------------------

    def _setup_analytic(self):
        law, grid = self.law, self.grid
        self.theta = law.waning_rate if law.family == "sis_gradual" else None
        self.aux = _GradualAux(self.theta, self.C) if self.theta else None
        self.nodes_v = self._cell_nodes()
        self.C_at_nodes = self.C.at(self.nodes_v)
        _exp_guard(self.C_at_nodes)
        dur = law.duration
        if isinstance(dur, Exponential):
            self.mu = dur.mu
            # f(v - s) = mu exp(-mu v) exp(mu s): the node factor shared by all rows
            self.dens_nodes = self.mu * np.exp(-self.mu * self.nodes_v)
        elif isinstance(dur, GammaDuration):
            self.mu = None
        elif isinstance(dur, Deterministic):
            self.mu = None
        else:
            raise TypeError(f"unsupported duration law {type(dur)!r}")

    def _indicator_jcum(self) -> np.ndarray:
        """Jcum[j, i] = integral_{s_j}^{t_i} exp(C(v)) dF(v - s_j), lower-tri in (j<=i)."""
        grid, dur = self.grid, self.law.duration
        n = grid.n
        if isinstance(dur, Exponential):
            B = self._exp_cum_cells()
            scale = np.exp(self.mu * grid.times)
            return np.triu(scale[:, None] * (B[None, :] - B[:, None]))
        if isinstance(dur, Deterministic):
            d = dur.d
            v = grid.times[:, None] + d
            reach = grid.times[None, :] - grid.times[:, None] >= d - 1e-12
            vals = np.exp(self.C.at(np.minimum(v, grid.horizon)))
            return np.where(reach, vals, 0.0)
        # gamma duration: per-row cumulative over cells
        out = np.zeros((n, n))
        w = GAUSS3_WEIGHTS * grid.dt
        expC = np.exp(self.C_at_nodes)
        for j in range(n - 1):
            x = self.nodes_v[j:] - grid.times[j]
            cells = (expC[j:] * dur.pdf(x)) @ w
            out[j, j + 1:] = np.cumsum(cells)
        return out

    def _exp_cum_cells(self) -> np.ndarray:
        """B[i] = mu * int_0^{t_i} exp(C(v) - mu v) dv for exponential durations."""
        if not hasattr(self, "_exp_B"):
            cell = (self.dens_nodes * np.exp(self.C_at_nodes)) @ GAUSS3_WEIGHTS * self.grid.dt
            self._exp_B = np.concatenate(([0.0], np.cumsum(cell)))
        return self._exp_B

    def _pair_table_indicator(self, kind: str) -> np.ndarray:
        jcum = self._indicator_jcum_cached()
        surv = self.never_surv
        return np.tril(surv[:, None] * jcum.T)

    def contract_pair(self, kind: str, g: np.ndarray) -> np.ndarray:
        """Trapezoid contraction out[i] = sum_{j<=i} w_j K(t_i, s_j) g[j].

        For SisIndicator with exponential durations the table factorizes as
        K[i, j] = exp(-C_i) exp(mu s_j) (B_i - B_j), so the contraction
        collapses to two cumulative sums and never materializes the table;
        everything else falls back to the dense table.
        """
        dt = self.grid.dt
        if (self.backend == "analytic" and self.law.family == "sis_indicator"
                and isinstance(self.law.duration, Exponential)):
            B = self._exp_cum_cells()
            eg = np.exp(self.mu * self.grid.times) * g
            P = np.cumsum(eg)
            Q = np.cumsum(eg * B)
            # diagonal K[i,i] = 0, first column K[i,0] = exp(-C_i) B_i
            return self.never_surv * (dt * (B * P - Q) - 0.5 * dt * B * g[0])
        return tri_contract(self.pair_table(kind), g, dt)

    def _grad_row_factors(self, i: int):
        """Per-row shared integrand pieces at the cell nodes for t = t_i."""
        t = self.grid.times[i]
        v = self.nodes_v[:i] if i > 0 else self.nodes_v[:0]
        Cv = self.C_at_nodes[:i]
        E = self.aux.w_at(v) - np.exp(-self.theta * (t - v)) * self.aux.W[i]
        surv = np.exp(-(self.C.nodes[i] - Cv - E))
        gfac_t = -np.expm1(-self.theta * (t - v))
        return v, surv, gfac_t

    def _pair_table_gradual(self, kind: str) -> np.ndarray:
        grid, dur = self.grid, self.law.duration
        n = grid.n
        out = np.zeros((n, n))
        w = GAUSS3_WEIGHTS * grid.dt
        times = grid.times
        if isinstance(dur, Deterministic):
            d = dur.d
            for i in range(1, n):
                t = times[i]
                v = times[:i] + d
                ok = (t - times[:i]) >= d - 1e-12
                v = np.minimum(v, grid.horizon)
                E = self.aux.w_at(v) - np.exp(-self.theta * (t - v)) * self.aux.W[i]
                surv = np.exp(-(self.C.nodes[i] - self.C.at(v) - E))
                gfac = -np.expm1(-self.theta * np.maximum(t - v, 0.0))
                row = surv * (gfac if kind == "gamma_surv" else 1.0)
                out[i, :i] = np.where(ok, row, 0.0)
            return out
        if isinstance(dur, Exponential):
            for i in range(1, n):
                v, surv, gfac_t = self._grad_row_factors(i)
                weight = gfac_t if kind == "gamma_surv" else 1.0
                cells = (surv * weight * self.dens_nodes[:i]) @ w
                B = np.concatenate(([0.0], np.cumsum(cells)))
                out[i, :i + 1] = np.exp(self.mu * times[:i + 1]) * (B[i] - B[:i + 1])
            return out
        # gamma duration: per-row, per-column cumulative (small grids only)
        if n > 321:
            raise ValueError(
                "semi-analytic SisGradual kernels with gamma durations are "
                f"limited to grids of {321} nodes; use the mc backend"
            )
        for i in range(1, n):
            v, surv, gfac_t = self._grad_row_factors(i)
            weight = (gfac_t if kind == "gamma_surv" else 1.0) * surv
            for j in range(i):
                x = v[j:] - times[j]
                cells = (weight[j:] * dur.pdf(x)) @ w
                out[i, j] = np.sum(cells)
        return out

    # -- triple kernels (semi-analytic) --------------------------------------

    def triple_row(self, i: int, kind: str) -> np.ndarray:
        """K(t_i, s_j, r_l) for j <= l <= i as an (i+1, i+1) matrix."""
        if kind not in _TRIPLE_KINDS:
            raise ValueError(f"{kind} is not a three-argument kernel")
        if self.backend == "mc":
            return self._triple_row_mc(i, kind)
        if self.law.family == "sis_indicator":
            # jcum is already zero for l < j, so the slice is the whole row
            jcum = self._indicator_jcum_cached()
            return self.never_surv[i] * jcum[: i + 1, : i + 1]
        return self._triple_row_gradual(i, kind)

    def _indicator_jcum_cached(self) -> np.ndarray:
        if not hasattr(self, "_jcum_cache"):
            self._jcum_cache = self._indicator_jcum()
        return self._jcum_cache

    def contracted_triple(self, kind: str, g: np.ndarray) -> np.ndarray:
        """Inner trapezoid contraction of a triple kernel against ``g``.

        Returns G[i, l] = sum_{j<=l} w_j K(t_i, s_j, r_l) g[j] with trapezoid
        weights on [0, r_l], so a double integral over {0<=s<=r<=t} collapses
        to one more pair contraction against r.  For SisIndicator the kernel
        factorizes as exp(-C(t_i)) * Jcum[j, l], making the result rank one;
        otherwise rows are streamed without storing the full triple array.
        """
        if kind not in _TRIPLE_KINDS:
            raise ValueError(f"{kind} is not a three-argument kernel")
        n, dt = self.grid.n, self.grid.dt
        if self.backend != "mc" and self.law.family == "sis_indicator":
            jcum = self._indicator_jcum_cached()
            col = np.cumsum(jcum * g[:, None], axis=0).diagonal() * dt
            p = col - 0.5 * dt * jcum[0] * g[0]  # diagonal jcum[l, l] = 0
            return np.tril(np.outer(self.never_surv, p))
        if n > MAX_TRIPLE_GRID:
            raise ValueError(
                f"streamed triple contraction on {n} nodes exceeds the "
                f"{MAX_TRIPLE_GRID}-node cap for this backend"
            )
        out = np.zeros((n, n))
        for i in range(1, n):
            row = self.triple_row(i, kind)
            cum = np.cumsum(row * g[: i + 1, None], axis=0).diagonal() * dt
            diag = row.diagonal()
            out[i, : i + 1] = cum - 0.5 * dt * (row[0] * g[0] + diag * g[: i + 1])
        return out

    def _triple_row_gradual(self, i: int, kind: str) -> np.ndarray:
        grid, dur = self.grid, self.law.duration
        times = grid.times
        t = times[i]
        out = np.zeros((i + 1, i + 1))
        if i == 0:
            return out
        w = GAUSS3_WEIGHTS * grid.dt
        v, surv, gfac_t = self._grad_row_factors(i)
        if isinstance(dur, Exponential):
            # factorized density: per target column l, cumulative over cells
            flat_v = v.reshape(-1)
            flat_surv = (surv * self.dens_nodes[:i]).reshape(-1)
            flat_gt = gfac_t.reshape(-1)
            for l in range(1, i + 1):
                r = times[l]
                m = 3 * l
                gfac_r = -np.expm1(-self.theta * (r - flat_v[:m]))
                wt = flat_gt[:m] if kind == "gamma_pair_surv" else 1.0
                vals = (flat_surv[:m] * gfac_r * wt).reshape(l, 3) @ w
                B = np.concatenate(([0.0], np.cumsum(vals)))
                out[: l + 1, l] = np.exp(self.mu * times[: l + 1]) * (B[l] - B[: l + 1])
            return out
        if isinstance(dur, Deterministic):
            d = dur.d
            vj = np.minimum(times[: i + 1] + d, grid.horizon)
            E = self.aux.w_at(vj) - np.exp(-self.theta * (t - vj)) * self.aux.W[i]
            base = np.exp(-(self.C.nodes[i] - self.C.at(vj) - E))
            gt = -np.expm1(-self.theta * np.maximum(t - times[: i + 1] - d, 0.0))
            for l in range(1, i + 1):
                r = times[l]
                ok = (r - times[: l + 1]) >= d - 1e-12
                gr = -np.expm1(-self.theta * np.maximum(r - times[: l + 1] - d, 0.0))
                wt = gt[: l + 1] if kind == "gamma_pair_surv" else 1.0
                out[: l + 1, l] = np.where(ok, base[: l + 1] * gr * wt, 0.0)
            return out
        raise ValueError(
            "three-argument SisGradual kernels with gamma durations are not "
            "available semi-analytically; use the mc backend"
        )

    # -- Monte-Carlo backend --------------------------------------------------

    def _setup_mc(self, mc_samples: int, seed: int):
        grid = self.grid
        if mc_samples < 2:
            raise ValueError("mc backend needs at least 2 samples")
        if mc_samples * grid.n**2 > 2e7:
            raise ValueError(
                f"mc kernel backend with {mc_samples} samples on {grid.n} nodes "
                "exceeds the memory budget; shrink the grid or sample count"
            )
        self.mc_n = mc_samples
        self.samples = piecewise_samples(self.law, seed, mc_samples) \
            if self.law.family == "piecewise_constant" else \
            [sample_pair(self.law, Stream(seed + 2 * m + 1)) for m in range(mc_samples)]
        offsets = grid.times
        self.gam_off = np.array([r.gamma(offsets) for r in self.samples])  # (M, n)
        self.eta_mc = np.array([r.eta for r in self.samples])
        # cumulative midpoint exponent X[m, j, i] = int_{s_j}^{t_i} gamma_m(u-s_j) fbar(u) du;
        # midpoints never straddle node-aligned profile jumps, unlike trapezoid nodes
        M, n = mc_samples, grid.n
        mid_off = (offsets[:-1] + offsets[1:]) / 2.0
        gam_mid = np.array([r.gamma(mid_off) for r in self.samples])  # (M, n-1)
        fbar_mid = 0.5 * (self.fbar[:-1] + self.fbar[1:])
        X = np.zeros((M, n, n))
        for j in range(n):
            g = gam_mid[:, : n - 1 - j] * fbar_mid[None, j:]
            X[:, j, j + 1:] = np.cumsum(grid.dt * g, axis=1)
        self.exp_mc = np.exp(-X)

    def _pair_table_mc(self, kind: str) -> np.ndarray:
        n = self.grid.n
        i_idx = np.arange(n)
        out = np.zeros((n, n))
        for j in range(n):
            offs = i_idx[j:] - j
            if kind == "gamma_surv":
                w = self.gam_off[:, offs]
            else:
                w = (self.grid.times[j:][None, :] - self.grid.times[j] >= self.eta_mc[:, None])
            out[j:, j] = np.mean(w * self.exp_mc[:, j, j:], axis=0)
        return out

    def _triple_row_mc(self, i: int, kind: str) -> np.ndarray:
        times = self.grid.times
        out = np.zeros((i + 1, i + 1))
        for j in range(i + 1):
            surv = self.exp_mc[:, j, i]
            if kind == "gamma_pair_surv":
                wt = self.gam_off[:, i - j]
            else:
                wt = (times[i] - times[j] >= self.eta_mc).astype(float)
            gl = self.gam_off[:, : i - j + 1]
            out[j, j: i + 1] = np.mean((wt * surv)[:, None] * gl, axis=0)
        return out

    # -- public table construction -------------------------------------------

    def pair_table(self, kind: str) -> np.ndarray:
        if self.backend == "mc":
            return self._pair_table_mc(kind)
        if self.law.family == "sis_indicator":
            return self._pair_table_indicator(kind)
        return self._pair_table_gradual(kind)

    def initial_vector(self, kind: str) -> np.ndarray:
        """gamma0_surv / ind0_surv as length-n vectors."""
        if (self.backend == "analytic" and self.law.family == "sis_indicator"
                and isinstance(self.law.duration, Exponential)):
            fresh = self.never_surv * self._exp_cum_cells()
        else:
            fresh = self.pair_table(kind.replace("0", ""))[:, 0]
        return (1.0 - self.p0) * self.never_surv + self.p0 * fresh

    def initial_pair_table(self, kind: str) -> np.ndarray:
        """gamma0_pair_surv / ind0_gamma_surv as (n, n) lower-triangular tables."""
        n = self.grid.n
        if self.backend == "mc" or self.law.family != "sis_indicator":
            base = "gamma_pair_surv" if kind == "gamma0_pair_surv" else "ind_gamma_surv"
            fresh = np.zeros((n, n))
            for i in range(n):
                fresh[i, : i + 1] = self.triple_row(i, base)[0]
        else:
            jcum = self._indicator_jcum_cached()
            fresh = np.tril(self.never_surv[:, None] * jcum[0, None, :])
        return (1.0 - self.p0) * self.never_surv[:, None] * np.tril(np.ones((n, n))) \
            + self.p0 * fresh


def eval_kernel(law, kind: str, fbar, grid: Grid, *, backend: str = "auto",
                mc_samples: int = 256, seed: int = 0) -> KernelTable:
    """Evaluate one expectation kernel on the grid.

    Parameters
    ----------
    law : ProfileLaw or InitialLaw
        InitialLaw is required for (and only for) the ``*0`` kinds.
    kind : str
        One of ``KERNEL_KINDS``.
    fbar : array of shape (grid.n,)
        Nonnegative gridded force of infection.
    backend : {"auto", "analytic", "mc"}
        "auto" uses the semi-analytic path for the SIS families and
        Monte-Carlo for PiecewiseConstant.
    mc_samples, seed
        Monte-Carlo sample count and common-random-number seed; ignored by
        the semi-analytic backend.
    """
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")
    is_initial = kind in _INITIAL_KINDS
    if is_initial and not isinstance(law, InitialLaw):
        raise TypeError(f"kernel kind {kind} requires an InitialLaw")
    if not is_initial and isinstance(law, InitialLaw):
        raise TypeError(f"kernel kind {kind} requires a ProfileLaw, not an InitialLaw")
    ws = KernelWorkspace(law, fbar, grid, backend=backend, mc_samples=mc_samples, seed=seed)
    if kind in ("gamma_surv", "ind_surv"):
        values = ws.pair_table(kind)
    elif kind in ("gamma0_surv", "ind0_surv"):
        values = ws.initial_vector(kind)
    elif kind in ("gamma0_pair_surv", "ind0_gamma_surv"):
        values = ws.initial_pair_table(kind)
    else:
        if grid.n > MAX_TRIPLE_GRID:
            raise ValueError(
                f"materializing a three-argument kernel on {grid.n} nodes exceeds "
                f"the {MAX_TRIPLE_GRID}-node cap; stream rows via KernelWorkspace.triple_row"
            )
        values = [ws.triple_row(i, kind) for i in range(grid.n)]
    return KernelTable(kind=kind, grid=grid, values=values)
