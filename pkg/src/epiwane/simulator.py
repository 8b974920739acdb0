"""Exact event-driven simulation of the finite-population epidemic.

Each of the N individuals carries an independent Poisson candidate-contact
stream of rate lambda_star with uniform marks u in (0, lambda_star).  A
candidate at time t infects individual k iff

    u <= gamma_k(t-) * fbar_N(t-),

where gamma_k is k's current susceptibility profile evaluated at the elapsed
time since its last infection and fbar_N = (1/N) sum_l lambda_l is the
population force of infection.  Because fbar_N <= lambda_star almost surely,
this thinning is exact: accepted candidates reproduce the epidemic's law with
no time discretization.  On acceptance the individual draws a fresh
(lambda, gamma, eta) profile from the stream keyed (master_seed, k, i) where
i counts its infections, so two runs sharing a master seed share every
contact time, mark and profile, which is the basis for the coupled and
quarantine variants.

Mean-field auxiliary agents are the same single-individual dynamics driven by
the deterministic limit force fbar instead of fbar_N.  ``simulate_coupled``
runs both on shared streams and reports per-individual sup differences of
the infection counters plus the two-term decomposition of the scaled
population fluctuations.  ``simulate_quarantine`` twins the baseline run with
a variant in which a fixed set of individuals never contributes infectivity,
and tracks the set of individuals whose histories have diverged.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .flln import LimitSolution
from .grid import Grid
from .profiles import InitialLaw, ProfileLaw, ProfileRealization, sample_initial, sample_pair
from .streams import Stream, derive_seed

__all__ = [
    "PopulationState",
    "Trajectory",
    "AgentPath",
    "CouplingDiagnostics",
    "simulate_population",
    "simulate_auxiliary_agent",
    "simulate_coupled",
    "simulate_quarantine",
    "agent_functionals",
]

log = logging.getLogger("epiwane.simulator")

MAX_CANDIDATES_DEFAULT = 5e7

# event kinds, ordered so rate expiries at time t apply before candidates at t
_RATE, _CAND = 0, 1


@dataclass
class PopulationState:
    """Snapshot of the individual-level state at a fixed time.

    Elapsed times are time - tau; for never-infected individuals (tau = 0,
    never = True) the profile is the constant (lambda = 0, gamma = 1) and the
    elapsed time is measured from 0.
    """

    time: float
    tau: np.ndarray          # last infection time
    eta: np.ndarray          # current infection duration (0 for never infected)
    never: np.ndarray        # True while an individual has never been infected
    infections: np.ndarray   # dynamic infection counts A_k
    realizations: List[Optional[ProfileRealization]]
    n_infectious: int
    sum_lambda: float

    def __post_init__(self):
        # same float expression as the event schedule (expiry at tau + eta)
        n_inf = int(np.sum((self.tau + self.eta > self.time) & ~self.never))
        if n_inf != self.n_infectious:
            raise ValueError(
                f"inconsistent state: {self.n_infectious} infectious recorded, "
                f"{n_inf} implied by (tau, eta)"
            )


@dataclass
class Trajectory:
    """Population path sampled on the grid plus the exact event log."""

    grid: Grid
    n: int
    seed: int
    fbar: np.ndarray
    sbar: np.ndarray
    infected: np.ndarray     # I^N(t), integer counts
    uninfected: np.ndarray   # U^N(t) = N - I^N(t)
    events: List[Tuple[float, int, int]]
    candidates: int
    final_state: Optional[PopulationState] = None


@dataclass
class AgentPath:
    """One mean-field agent driven by the deterministic force."""

    grid: Grid
    seed: int
    event_times: List[float]
    gamma: np.ndarray        # X(t) = gamma_{A(t)}(elapsed)
    lam: np.ndarray          # Y(t) = lambda_{A(t)}(elapsed)
    infected: np.ndarray     # 1{elapsed < eta}
    uninfected: np.ndarray   # 1{elapsed >= eta}


@dataclass
class CouplingDiagnostics:
    """Diagnostics of a shared-randomness comparison run.

    Mean-field coupling runs fill the infection-counter sup differences and
    the two-term decomposition of the scaled population fluctuations;
    quarantine runs fill the descendant set of the quarantined individuals
    and the trajectory gaps between baseline and variant.  Unused groups stay
    None.
    """

    # population vs mean-field agents
    sup_diff: Optional[np.ndarray] = None   # per individual: sup_t |A^N_k - A_k|
    sup_diff_mean: float = 0.0
    sup_diff_max: float = 0.0
    fhat: Optional[np.ndarray] = None          # sqrt(N) (fbar_N - fbar)
    fhat_coupling: Optional[np.ndarray] = None    # sqrt(N) (fbar_N - agent avg)
    fhat_meanfield: Optional[np.ndarray] = None   # sqrt(N) (agent avg - fbar)
    shat: Optional[np.ndarray] = None
    shat_coupling: Optional[np.ndarray] = None
    shat_meanfield: Optional[np.ndarray] = None

    # baseline vs quarantine variant
    quarantined: Optional[Tuple[int, ...]] = None
    descendants: Optional[np.ndarray] = None        # indices that ever diverged
    divergence_times: Optional[np.ndarray] = None   # sorted entry times into D
    diverged_count: Optional[np.ndarray] = None     # |D(t)| on the grid
    force_gap: Optional[np.ndarray] = None          # |fbar_N - fbar_N_variant|
    susceptibility_gap: Optional[np.ndarray] = None


class _Members:
    """Mutable per-individual state for one run."""

    __slots__ = ("tau", "eta", "never", "next_idx", "realizations", "n_inf",
                 "sum_lambda", "family", "theta", "lambda_base")

    def __init__(self, n: int, law: ProfileLaw):
        self.tau = np.zeros(n)
        self.eta = np.zeros(n)
        self.never = np.ones(n, dtype=bool)
        self.next_idx = np.ones(n, dtype=np.int64)
        self.realizations: List[Optional[ProfileRealization]] = [None] * n
        self.n_inf = 0
        self.sum_lambda = 0.0
        self.family = law.family
        self.theta = law.waning_rate
        self.lambda_base = law.lambda_base

    def gamma_at(self, k: int, t: float) -> float:
        if self.never[k]:
            return 1.0
        if self.family == "sis_indicator":
            return 0.0 if self.tau[k] + self.eta[k] > t else 1.0
        s = t - self.tau[k]
        if self.family == "sis_gradual":
            w = s - self.eta[k]
            return -math.expm1(-self.theta * w) if w >= 0 else 0.0
        return float(self.realizations[k].gamma(s))

    def force(self, n: int) -> float:
        if self.family in ("sis_indicator", "sis_gradual"):
            return self.lambda_base * self.n_inf / n
        return self.sum_lambda / n

    def gamma_vector(self, t: float) -> np.ndarray:
        if self.family == "sis_indicator":
            return (~self.infected_mask(t)).astype(float)
        s = t - self.tau
        if self.family == "sis_gradual":
            w = s - self.eta
            out = np.where(w >= 0, -np.expm1(-self.theta * np.maximum(w, 0.0)), 0.0)
            out[self.never] = 1.0
            return out
        return np.array([
            1.0 if self.never[k] else float(self.realizations[k].gamma(s[k]))
            for k in range(len(s))
        ])

    def lambda_vector(self, t: float) -> np.ndarray:
        if self.family in ("sis_indicator", "sis_gradual"):
            return self.lambda_base * self.infected_mask(t)
        s = t - self.tau
        return np.array([
            0.0 if self.never[k] else float(self.realizations[k].lam(s[k]))
            for k in range(len(s))
        ])

    def infected_mask(self, t: float) -> np.ndarray:
        return (self.tau + self.eta > t) & ~self.never

    def infect(self, k: int, t: float, r: ProfileRealization, heap, side: int):
        """Apply an infection and schedule its rate-change events."""
        self.tau[k] = t
        self.eta[k] = r.eta
        self.never[k] = False
        self.realizations[k] = r
        self.n_inf += 1
        if self.family == "piecewise_constant":
            vals = r.lam_values
            self.sum_lambda += vals[0]
            for b in range(1, len(vals)):
                heapq.heappush(heap, (t + r.lam_bounds[b], _RATE, side, k,
                                      vals[b] - vals[b - 1], 0))
            heapq.heappush(heap, (t + r.eta, _RATE, side, k, -vals[-1], -1))
        else:
            self.sum_lambda += self.lambda_base
            heapq.heappush(heap, (t + r.eta, _RATE, side, k, -self.lambda_base, -1))

    def apply_rate(self, dlam: float, dninf: int):
        self.sum_lambda += dlam
        self.n_inf += dninf

    def snapshot(self, t: float) -> PopulationState:
        return PopulationState(time=t, tau=self.tau.copy(), eta=self.eta.copy(),
                               never=self.never.copy(), infections=self.next_idx - 1,
                               realizations=list(self.realizations),
                               n_infectious=self.n_inf, sum_lambda=self.sum_lambda)


def _candidate_guard(n: int, lambda_star: float, horizon: float, cap: float):
    expected = n * lambda_star * horizon
    if expected > cap:
        raise ValueError(
            f"expected candidate count {expected:.2e} exceeds the cap {cap:.2e}; "
            "raise max_candidates explicitly to run at this scale"
        )


def _initial_realization(init: InitialLaw, master: int, k: int, n: int,
                         bernoulli: bool) -> Optional[ProfileRealization]:
    """Individual k's time-0 state; None if never infected.

    In the default deterministic mode exactly floor(n * p) individuals, the
    first ones by index, start infected; in Bernoulli mode each individual
    flips its own coin (the i.i.d. initial condition matching the limit
    theorems).  Either way the profile comes from the (master, k, 0) stream.
    """
    stream = Stream(derive_seed(master, k, 0))
    if bernoulli:
        r = sample_initial(init, stream)
        return None if r.never_infected else r
    m = int(math.floor(n * init.p_infected + 1e-9))
    if k < m:
        return sample_pair(init.profile, stream)
    return None


def _seed_population(members: _Members, init: InitialLaw, master: int, n: int,
                     bernoulli: bool, heap, side: int):
    for k in range(n):
        r = _initial_realization(init, master, k, n, bernoulli)
        if r is not None:
            members.infect(k, 0.0, r, heap, side)


def _push_candidate(heap, stream: Stream, k: int, t_from: float,
                    lambda_star: float):
    gap = stream.exponential(lambda_star)
    mark = stream.uniform() * lambda_star
    heapq.heappush(heap, (t_from + gap, _CAND, 0, k, mark, 0))


def simulate_population(law: ProfileLaw, init: InitialLaw, n: int, grid: Grid,
                        seed: int, *, bernoulli_init: bool = False,
                        record_events: bool = True,
                        keep_final_state: bool = False,
                        max_candidates: float = MAX_CANDIDATES_DEFAULT) -> Trajectory:
    """Simulate one population of size n on [0, grid.horizon].

    Exact thinning; the returned trajectory samples fbar_N, sbar_N and the
    infected/uninfected counts at the grid times (cadlag: events at a grid
    time are applied before the sample is taken).
    """
    if n < 1:
        raise ValueError(f"population size must be >= 1, got {n}")
    lam_star = law.lambda_star
    horizon = grid.horizon
    _candidate_guard(n, lam_star, horizon, max_candidates)

    members = _Members(n, law)
    heap: list = []
    _seed_population(members, init, seed, n, bernoulli_init, heap, 0)
    cand_streams = [Stream(derive_seed(seed, k, -1)) for k in range(n)]
    for k in range(n):
        _push_candidate(heap, cand_streams[k], k, 0.0, lam_star)

    times = grid.times
    g_next = 0
    n_grid = grid.n
    fbar = np.empty(n_grid)
    sbar = np.empty(n_grid)
    infected = np.empty(n_grid, dtype=np.int64)
    events: List[Tuple[float, int, int]] = []
    candidates = 0

    def record_until(t_limit: float):
        nonlocal g_next
        while g_next < n_grid and times[g_next] < t_limit:
            t = times[g_next]
            fbar[g_next] = members.force(n)
            sbar[g_next] = members.gamma_vector(t).mean()
            infected[g_next] = members.n_inf
            g_next += 1

    while heap:
        t_e = heap[0][0]
        if t_e > horizon:
            break
        record_until(t_e)
        t_e, kind, _side, k, payload, extra = heapq.heappop(heap)
        if kind == _RATE:
            members.apply_rate(payload, extra)
            continue
        candidates += 1
        _push_candidate(heap, cand_streams[k], k, t_e, lam_star)
        if members.n_inf == 0 and members.sum_lambda == 0.0:
            continue
        if payload <= members.gamma_at(k, t_e) * members.force(n):
            i = int(members.next_idx[k])
            r = sample_pair(law, Stream(derive_seed(seed, k, i)))
            members.infect(k, t_e, r, heap, 0)
            members.next_idx[k] = i + 1
            if record_events:
                events.append((t_e, k, i))
    record_until(np.inf)

    return Trajectory(
        grid=grid, n=n, seed=seed, fbar=fbar, sbar=sbar, infected=infected,
        uninfected=n - infected, events=events, candidates=candidates,
        final_state=members.snapshot(horizon) if keep_final_state else None,
    )


# ---------------------------------------------------------------------------
# Mean-field auxiliary agents
# ---------------------------------------------------------------------------


class _ForceInterp:
    """Linear interpolant of the limit force on its grid."""

    __slots__ = ("dt", "values", "n")

    def __init__(self, flln: LimitSolution):
        self.dt = flln.grid.dt
        self.values = flln.fbar
        self.n = flln.grid.n

    def at(self, t: float) -> float:
        x = t / self.dt
        i = int(x)
        if i >= self.n - 1:
            return float(self.values[-1])
        w = x - i
        return float(self.values[i] * (1.0 - w) + self.values[i + 1] * w)


def _simulate_agent_events(law: ProfileLaw, init: InitialLaw, force: _ForceInterp,
                           master: int, k: int, horizon: float):
    """Event history [(t_i, realization_i)] of one agent; empty if never infected.

    Initial state is the i.i.d. Bernoulli draw of the initial law; there is
    no population to anchor a deterministic seeding count to.
    """
    lam_star = law.lambda_star
    history: List[Tuple[float, ProfileRealization]] = []
    r0 = _initial_realization(init, master, k, 1, True)
    tau, eta, never = 0.0, 0.0, True
    current: Optional[ProfileRealization] = None
    if r0 is not None:
        history.append((0.0, r0))
        tau, eta, never, current = 0.0, r0.eta, False, r0
    stream = Stream(derive_seed(master, k, -1))
    theta = law.waning_rate
    t = stream.exponential(lam_star)
    idx = 1
    while t <= horizon:
        mark = stream.uniform() * lam_star
        if never:
            g = 1.0
        elif law.family == "sis_indicator":
            g = 0.0 if tau + eta > t else 1.0
        elif law.family == "sis_gradual":
            w = (t - tau) - eta
            g = -math.expm1(-theta * w) if w >= 0 else 0.0
        else:
            g = float(current.gamma(t - tau))
        if g > 0.0 and mark <= g * force.at(t):
            r = sample_pair(law, Stream(derive_seed(master, k, idx)))
            history.append((t, r))
            tau, eta, never, current = t, r.eta, False, r
            idx += 1
        t += stream.exponential(lam_star)
    return history


def agent_functionals(history, grid: Grid) -> Tuple[np.ndarray, np.ndarray,
                                                    np.ndarray, np.ndarray]:
    """(gamma, lambda, infected, uninfected) of one agent on the grid."""
    n = grid.n
    gam = np.ones(n)
    lam = np.zeros(n)
    inf = np.zeros(n)
    times = grid.times
    for idx, (t0, r) in enumerate(history):
        t1 = history[idx + 1][0] if idx + 1 < len(history) else np.inf
        lo = int(np.searchsorted(times, t0, side="left"))
        hi = int(np.searchsorted(times, t1, side="left"))
        if hi <= lo:
            continue
        s = times[lo:hi] - t0
        gam[lo:hi] = r.gamma(s)
        lam[lo:hi] = r.lam(s)
        inf[lo:hi] = (s < r.eta).astype(float)
    return gam, lam, inf, 1.0 - inf


def _check_coverage(flln: LimitSolution, grid: Grid):
    if grid.horizon > flln.grid.horizon + 1e-9 * flln.grid.dt:
        raise ValueError(
            f"limit solution covers [0, {flln.grid.horizon:g}] but the run "
            f"horizon is {grid.horizon:g}"
        )


def simulate_auxiliary_agent(law: ProfileLaw, init: InitialLaw,
                             flln: LimitSolution, seed: int,
                             agent: int = 0,
                             grid: Optional[Grid] = None) -> AgentPath:
    """One mean-field agent: thinning against the deterministic force.

    The agent re-infects at rate gamma(elapsed) * fbar(t) and redraws its
    profile at every infection; initial state follows the initial law
    (Bernoulli coin on the agent's own stream).  Functionals are sampled on
    ``grid`` (default: the limit solution's own grid, which must cover it).
    """
    if grid is None:
        grid = flln.grid
    _check_coverage(flln, grid)
    history = _simulate_agent_events(law, init, _ForceInterp(flln), seed, agent,
                                     grid.horizon)
    gam, lam, inf, uninf = agent_functionals(history, grid)
    return AgentPath(grid=grid, seed=seed, event_times=[t for t, _ in history],
                     gamma=gam, lam=lam, infected=inf, uninfected=uninf)


# ---------------------------------------------------------------------------
# Coupled population / agent simulation
# ---------------------------------------------------------------------------


def simulate_coupled(law: ProfileLaw, init: InitialLaw, n: int,
                     flln: LimitSolution, seed: int, *,
                     grid: Optional[Grid] = None,
                     bernoulli_init: bool = True,
                     max_candidates: float = MAX_CANDIDATES_DEFAULT
                     ) -> Tuple[Trajectory, List[AgentPath], CouplingDiagnostics]:
    """Population and n mean-field agents on shared candidate/profile streams.

    Agent k consumes exactly the same candidate times, marks and profile
    draws as individual k; the runs differ only through the force each one
    sees (fbar_N versus the limit fbar).  Returns the population trajectory,
    the n agent paths, and diagnostics: per-individual sup differences of the
    infection counters and the decomposition of the scaled fluctuations into
    a coupling term (population minus agents) and a mean-field term (agents
    minus limit), which telescopes exactly.
    """
    if grid is None:
        grid = flln.grid
    _check_coverage(flln, grid)
    lam_star = law.lambda_star
    horizon = grid.horizon
    _candidate_guard(n, lam_star, horizon, max_candidates)
    force = _ForceInterp(flln)

    pop = _Members(n, law)
    ag = _Members(n, law)
    heap: list = []
    histories: List[List[Tuple[float, ProfileRealization]]] = [[] for _ in range(n)]
    _seed_population(pop, init, seed, n, bernoulli_init, heap, 0)
    # agents get the identical time-0 state (same streams, same rule)
    for k in range(n):
        r0 = _initial_realization(init, seed, k, n, bernoulli_init)
        if r0 is not None:
            ag.infect(k, 0.0, r0, heap, 1)
            histories[k].append((0.0, r0))
    cand_streams = [Stream(derive_seed(seed, k, -1)) for k in range(n)]
    for k in range(n):
        _push_candidate(heap, cand_streams[k], k, 0.0, lam_star)

    sup_diff = np.zeros(n)
    times = grid.times
    n_grid = grid.n
    g_next = 0
    fbar_pop = np.empty(n_grid)
    sbar_pop = np.empty(n_grid)
    infected = np.empty(n_grid, dtype=np.int64)
    events: List[Tuple[float, int, int]] = []
    candidates = 0

    def record_until(t_limit: float):
        nonlocal g_next
        while g_next < n_grid and times[g_next] < t_limit:
            t = times[g_next]
            fbar_pop[g_next] = pop.force(n)
            sbar_pop[g_next] = pop.gamma_vector(t).mean()
            infected[g_next] = pop.n_inf
            g_next += 1

    while heap:
        t_e = heap[0][0]
        if t_e > horizon:
            break
        record_until(t_e)
        t_e, kind, side, k, payload, extra = heapq.heappop(heap)
        if kind == _RATE:
            (pop if side == 0 else ag).apply_rate(payload, extra)
            continue
        candidates += 1
        _push_candidate(heap, cand_streams[k], k, t_e, lam_star)
        if payload <= pop.gamma_at(k, t_e) * pop.force(n):
            i = int(pop.next_idx[k])
            pop.infect(k, t_e, sample_pair(law, Stream(derive_seed(seed, k, i))),
                       heap, 0)
            pop.next_idx[k] = i + 1
            events.append((t_e, k, i))
        if payload <= ag.gamma_at(k, t_e) * force.at(t_e):
            i = int(ag.next_idx[k])
            r = sample_pair(law, Stream(derive_seed(seed, k, i)))
            ag.infect(k, t_e, r, heap, 1)
            ag.next_idx[k] = i + 1
            histories[k].append((t_e, r))
        d = abs(int(pop.next_idx[k]) - int(ag.next_idx[k]))
        if d > sup_diff[k]:
            sup_diff[k] = d
    record_until(np.inf)

    paths = []
    lam_sum = np.zeros(n_grid)
    gam_sum = np.zeros(n_grid)
    for k in range(n):
        gam, lam, inf, uninf = agent_functionals(histories[k], grid)
        lam_sum += lam
        gam_sum += gam
        paths.append(AgentPath(grid=grid, seed=seed,
                               event_times=[t for t, _ in histories[k]],
                               gamma=gam, lam=lam, infected=inf, uninfected=uninf))
    fbar_ag = lam_sum / n
    sbar_ag = gam_sum / n

    fbar_lim = np.interp(times, flln.grid.times, flln.fbar)
    sbar_lim = np.interp(times, flln.grid.times, flln.sbar)
    sqrt_n = math.sqrt(n)
    traj = Trajectory(grid=grid, n=n, seed=seed, fbar=fbar_pop, sbar=sbar_pop,
                      infected=infected, uninfected=n - infected, events=events,
                      candidates=candidates)
    diag = CouplingDiagnostics(
        sup_diff=sup_diff,
        sup_diff_mean=float(sup_diff.mean()),
        sup_diff_max=float(sup_diff.max()),
        fhat=sqrt_n * (fbar_pop - fbar_lim),
        fhat_coupling=sqrt_n * (fbar_pop - fbar_ag),
        fhat_meanfield=sqrt_n * (fbar_ag - fbar_lim),
        shat=sqrt_n * (sbar_pop - sbar_lim),
        shat_coupling=sqrt_n * (sbar_pop - sbar_ag),
        shat_meanfield=sqrt_n * (sbar_ag - sbar_lim),
    )
    return traj, paths, diag


# ---------------------------------------------------------------------------
# Quarantine variant
# ---------------------------------------------------------------------------


def simulate_quarantine(law: ProfileLaw, init: InitialLaw, n: int, grid: Grid,
                        seed: int, quarantined: Sequence[int], *,
                        bernoulli_init: bool = False,
                        max_candidates: float = MAX_CANDIDATES_DEFAULT
                        ) -> Tuple[Trajectory, Trajectory, CouplingDiagnostics]:
    """Baseline run twinned with a variant whose quarantined set never infects.

    Quarantined individuals keep their own exposure and susceptibility
    dynamics in the variant; only their infectivity is withheld from the
    force of infection.  An individual enters the diverged set D(t) the first
    time its history differs between the runs; quarantined individuals enter
    at their first infection in either run (time 0 if initially infected).
    Both runs share all randomness, so with no divergence the trajectories
    are identical.
    """
    q_set = frozenset(int(k) for k in quarantined)
    if not 1 <= len(q_set) <= 2:
        raise ValueError(f"quarantined set must have size 1 or 2, got {len(q_set)}")
    for k in q_set:
        if not 0 <= k < n:
            raise ValueError(f"quarantined index {k} outside population of size {n}")
    lam_star = law.lambda_star
    horizon = grid.horizon
    _candidate_guard(n, lam_star, horizon, max_candidates)

    base = _Members(n, law)
    var = _Members(n, law)
    heap: list = []
    _seed_population(base, init, seed, n, bernoulli_init, heap, 0)
    _seed_population(var, init, seed, n, bernoulli_init, heap, 1)
    # withhold quarantined infectivity from the variant force: drop their
    # scheduled rate changes and back their time-0 contribution out; var.n_inf
    # and var.sum_lambda then track the non-quarantined force only
    heap = [item for item in heap
            if not (item[1] == _RATE and item[2] == 1 and item[3] in q_set)]
    heapq.heapify(heap)
    for k in q_set:
        if not var.never[k]:
            var.sum_lambda -= var.realizations[k].lam_values[0] \
                if law.family == "piecewise_constant" else var.lambda_base
            var.n_inf -= 1

    diverged = np.zeros(n, dtype=bool)
    div_times: List[float] = []

    def mark_diverged(k: int, t: float):
        if not diverged[k]:
            diverged[k] = True
            div_times.append(t)

    for k in q_set:  # initially infected quarantined individuals diverge at 0
        if not base.never[k]:
            mark_diverged(k, 0.0)

    cand_streams = [Stream(derive_seed(seed, k, -1)) for k in range(n)]
    for k in range(n):
        _push_candidate(heap, cand_streams[k], k, 0.0, lam_star)

    times = grid.times
    n_grid = grid.n
    g_next = 0
    out = {name: np.empty(n_grid) for name in
           ("fb_b", "sb_b", "fb_v", "sb_v")}
    inf_b = np.empty(n_grid, dtype=np.int64)
    inf_v = np.empty(n_grid, dtype=np.int64)
    dcount = np.empty(n_grid, dtype=np.int64)
    events: List[Tuple[float, int, int]] = []
    candidates = 0

    def variant_force(t: float) -> float:
        if law.family in ("sis_indicator", "sis_gradual"):
            return law.lambda_base * var.n_inf / n
        return var.sum_lambda / n

    def record_until(t_limit: float):
        nonlocal g_next
        while g_next < n_grid and times[g_next] < t_limit:
            t = times[g_next]
            out["fb_b"][g_next] = base.force(n)
            out["sb_b"][g_next] = base.gamma_vector(t).mean()
            out["fb_v"][g_next] = variant_force(t)
            out["sb_v"][g_next] = var.gamma_vector(t).mean()
            inf_b[g_next] = base.n_inf
            inf_v[g_next] = int(np.sum(var.infected_mask(t)))
            dcount[g_next] = int(diverged.sum())
            g_next += 1

    while heap:
        t_e = heap[0][0]
        if t_e > horizon:
            break
        record_until(t_e)
        t_e, kind, side, k, payload, extra = heapq.heappop(heap)
        if kind == _RATE:
            (base if side == 0 else var).apply_rate(payload, extra)
            continue
        candidates += 1
        _push_candidate(heap, cand_streams[k], k, t_e, lam_star)
        acc_b = payload <= base.gamma_at(k, t_e) * base.force(n)
        acc_v = payload <= var.gamma_at(k, t_e) * variant_force(t_e)
        if acc_b:
            i = int(base.next_idx[k])
            base.infect(k, t_e, sample_pair(law, Stream(derive_seed(seed, k, i))),
                        heap, 0)
            base.next_idx[k] = i + 1
            events.append((t_e, k, i))
        if acc_v:
            i = int(var.next_idx[k])
            r = sample_pair(law, Stream(derive_seed(seed, k, i)))
            if k in q_set:
                # state evolves, force contribution withheld
                var.tau[k] = t_e
                var.eta[k] = r.eta
                var.never[k] = False
                var.realizations[k] = r
            else:
                var.infect(k, t_e, r, heap, 1)
            var.next_idx[k] = i + 1
        if acc_b != acc_v:
            mark_diverged(k, t_e)
        elif acc_b and k in q_set:
            mark_diverged(k, t_e)
    record_until(np.inf)

    base_traj = Trajectory(grid=grid, n=n, seed=seed, fbar=out["fb_b"],
                           sbar=out["sb_b"], infected=inf_b, uninfected=n - inf_b,
                           events=events, candidates=candidates)
    var_traj = Trajectory(grid=grid, n=n, seed=seed, fbar=out["fb_v"],
                          sbar=out["sb_v"], infected=inf_v, uninfected=n - inf_v,
                          events=[], candidates=candidates)
    diag = CouplingDiagnostics(
        quarantined=tuple(sorted(q_set)),
        descendants=np.nonzero(diverged)[0],
        divergence_times=np.array(sorted(div_times)),
        diverged_count=dcount,
        force_gap=np.abs(out["fb_b"] - out["fb_v"]),
        susceptibility_gap=np.abs(out["sb_b"] - out["sb_v"]),
    )
    return base_traj, var_traj, diag
