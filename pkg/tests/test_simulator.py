"""Event-driven simulator: exactness, invariants, coupling and quarantine."""

import math

import numpy as np
import pytest

from epiwane import (
    Deterministic,
    Exponential,
    GammaDuration,
    Grid,
    InitialLaw,
    LimitSolution,
    PopulationState,
    ProfileLaw,
    Segments,
    simulate_auxiliary_agent,
    simulate_coupled,
    simulate_population,
    simulate_quarantine,
    solve_flln,
)

MARKOV = ProfileLaw.sis_indicator(2.0, Exponential(1.0))
MARKOV_INIT = InitialLaw(0.1, MARKOV)


def piecewise_law():
    seg = Segments(
        lambda_values=(1.5, 0.8),
        lambda_gaps=(Exponential(2.0), Deterministic(0.5)),
        gamma_values=(0.0, 0.6, 1.0),
        gamma_gaps=(Deterministic(0.4), GammaDuration(2.0, 0.3)),
    )
    return ProfileLaw.piecewise_constant(seg)


def test_two_individual_escape_probability():
    # one individual infected with rate 2 for one unit of time, the other
    # susceptible with gamma = 1: P(no transmission by 1) = exp(-(2/2)*1)
    law = ProfileLaw.sis_indicator(2.0, Deterministic(1.0))
    init = InitialLaw(0.5, law)
    g = Grid.from_horizon(1.0, 0.1)
    reps = 20000
    hits = sum(
        len(simulate_population(law, init, 2, g, seed=10_000 + rep).events) == 0
        for rep in range(reps)
    )
    phat = hits / reps
    target = math.exp(-1.0)
    se = math.sqrt(target * (1.0 - target) / reps)
    assert abs(phat - target) <= 3.0 * se


def test_zero_initial_prevalence_stays_empty():
    init = InitialLaw(0.0, MARKOV)
    tr = simulate_population(MARKOV, init, 50, Grid.from_horizon(3.0, 0.05), seed=1)
    assert tr.events == []
    assert np.all(tr.infected == 0)
    assert np.all(tr.fbar == 0.0)
    assert np.all(tr.sbar == 1.0)


@pytest.mark.parametrize("law,p", [
    (MARKOV, 0.2),
    (ProfileLaw.sis_gradual(2.0, Exponential(1.0), 1.5), 0.2),
    (piecewise_law(), 0.3),
])
def test_conservation_and_rate_bounds(law, p):
    init = InitialLaw(p, law)
    tr = simulate_population(law, init, 60, Grid.from_horizon(4.0, 0.05), seed=3)
    assert np.all(tr.infected + tr.uninfected == 60)
    assert np.all(tr.fbar >= -1e-12) and np.all(tr.fbar <= law.lambda_star + 1e-12)
    assert np.all(tr.sbar >= 0.0) and np.all(tr.sbar <= 1.0)
    assert all(i >= 1 and 0 <= k < 60 and 0.0 < t <= 4.0 for t, k, i in tr.events)
    assert tr.candidates > 0


def test_indicator_susceptibility_identity():
    # for indicator profiles gamma = 1 exactly when not currently infectious
    tr = simulate_population(MARKOV, MARKOV_INIT, 120, Grid.from_horizon(5.0, 0.05),
                             seed=7)
    np.testing.assert_allclose(tr.sbar, tr.uninfected / 120, rtol=0, atol=1e-14)
    np.testing.assert_allclose(tr.fbar, 2.0 * tr.infected / 120, rtol=0, atol=1e-14)


def test_ensemble_mean_tracks_limit():
    # replicate average of I_N/N vs the deterministic limit; allowance is
    # 3 SE of the replicate scatter plus an O(1/N) finite-size bias term
    g = Grid.from_horizon(6.0, 0.02)
    sol = solve_flln(MARKOV, MARKOV_INIT, g)
    reps, n = 40, 800
    probes = [int(round(t / g.dt)) for t in (1.5, 3.0, 6.0)]
    vals = np.empty((reps, len(probes)))
    for rep in range(reps):
        tr = simulate_population(MARKOV, MARKOV_INIT, n, g, seed=42_000 + rep)
        vals[rep] = tr.infected[probes] / n
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(reps)
    for j, idx in enumerate(probes):
        assert abs(mean[j] - sol.ibar[idx]) <= 3.0 * se[j] + 4.0 / n


def test_event_log_and_initial_modes():
    g = Grid.from_horizon(3.0, 0.05)
    tr = simulate_population(MARKOV, MARKOV_INIT, 200, g, seed=11)
    assert tr.infected[0] == 20  # floor(N p) seeded deterministically
    times = [t for t, _, _ in tr.events]
    assert times == sorted(times)
    assert all(t > 0.0 for t in times)
    per_k = {}
    for t, k, i in tr.events:
        assert i == per_k.get(k, 0) + 1  # infection indices count 1, 2, ...
        per_k[k] = i

    trb = simulate_population(MARKOV, MARKOV_INIT, 1000, g, seed=11,
                              bernoulli_init=True)
    m, sd = 1000 * 0.1, math.sqrt(1000 * 0.1 * 0.9)
    assert m - 3 * sd <= trb.infected[0] <= m + 3 * sd


def test_reproducibility():
    g = Grid.from_horizon(2.0, 0.05)
    a = simulate_population(MARKOV, MARKOV_INIT, 80, g, seed=21)
    b = simulate_population(MARKOV, MARKOV_INIT, 80, g, seed=21)
    assert np.array_equal(a.fbar, b.fbar) and np.array_equal(a.sbar, b.sbar)
    assert a.events == b.events
    c = simulate_population(MARKOV, MARKOV_INIT, 80, g, seed=22)
    assert a.events != c.events


def test_resource_guard_and_validation():
    g = Grid.from_horizon(2.0, 0.05)
    with pytest.raises(ValueError, match="candidate count"):
        simulate_population(MARKOV, MARKOV_INIT, 10**9, g, seed=0)
    with pytest.raises(ValueError, match="population size"):
        simulate_population(MARKOV, MARKOV_INIT, 0, g, seed=0)
    with pytest.raises(ValueError, match="size 1 or 2"):
        simulate_quarantine(MARKOV, MARKOV_INIT, 10, g, 0, quarantined=[])
    with pytest.raises(ValueError, match="size 1 or 2"):
        simulate_quarantine(MARKOV, MARKOV_INIT, 10, g, 0, quarantined=[1, 2, 3])
    with pytest.raises(ValueError, match="outside"):
        simulate_quarantine(MARKOV, MARKOV_INIT, 10, g, 0, quarantined=[10])


def test_final_state_snapshot():
    tr = simulate_population(MARKOV, MARKOV_INIT, 30, Grid.from_horizon(2.0, 0.05),
                             seed=8, keep_final_state=True)
    st = tr.final_state
    assert st.time == 2.0
    per_k = {k: i for _, k, i in tr.events}
    assert all(st.infections[k] == per_k.get(k, 0) for k in range(30))
    assert st.n_infectious == tr.infected[-1]
    with pytest.raises(ValueError, match="inconsistent"):
        PopulationState(time=1.0, tau=np.zeros(2), eta=np.array([2.0, 0.0]),
                        never=np.array([False, True]), infections=np.zeros(2),
                        realizations=[None, None], n_infectious=0, sum_lambda=0.0)


# -- mean-field agents -------------------------------------------------------


def test_agent_zero_force_keeps_initial_profile():
    g = Grid.from_horizon(3.0, 0.05)
    zero = LimitSolution.constant_force(g, 0.0)
    init = InitialLaw(0.4, MARKOV)
    for k in range(200):
        ap = simulate_auxiliary_agent(MARKOV, init, zero, seed=5, agent=k)
        assert len(ap.event_times) <= 1  # at most the time-0 infection
        assert np.all(ap.infected + ap.uninfected == 1.0)
        assert np.all((0.0 <= ap.gamma) & (ap.gamma <= 1.0))
        assert np.all((0.0 <= ap.lam) & (ap.lam <= MARKOV.lambda_star))
        if not ap.event_times:
            assert np.all(ap.gamma == 1.0) and np.all(ap.lam == 0.0)


def test_agent_endemic_occupancy():
    # constant force lambda * i_endemic = 1 makes the agent a two-state Markov
    # chain with stationary P(infected) = 1/2; by t = 15 the chain has mixed
    g = Grid.from_horizon(15.0, 0.05)
    endemic = LimitSolution.constant_force(g, 1.0)
    m = 3000
    occ = sum(
        simulate_auxiliary_agent(MARKOV, MARKOV_INIT, endemic, seed=99, agent=k)
        .infected[-1]
        for k in range(m)
    ) / m
    assert abs(occ - 0.5) <= 3.0 * math.sqrt(0.25 / m)


def test_agent_horizon_coverage():
    g = Grid.from_horizon(2.0, 0.02)
    sol = solve_flln(MARKOV, MARKOV_INIT, g)
    with pytest.raises(ValueError, match="horizon"):
        simulate_auxiliary_agent(MARKOV, MARKOV_INIT, sol, 1,
                                 grid=Grid.from_horizon(3.0, 0.02))
    coarse = simulate_auxiliary_agent(MARKOV, MARKOV_INIT, sol, 1,
                                      grid=Grid.from_horizon(2.0, 0.1))
    assert coarse.gamma.shape == (21,)


# -- coupled population / agents ---------------------------------------------


def test_coupled_decomposition_and_structure():
    g = Grid.from_horizon(2.0, 0.02)
    sol = solve_flln(MARKOV, MARKOV_INIT, g)
    n = 200
    tr, paths, diag = simulate_coupled(MARKOV, MARKOV_INIT, n, sol, seed=5)
    assert len(paths) == n
    # the two-term split telescopes exactly
    np.testing.assert_allclose(diag.fhat, diag.fhat_coupling + diag.fhat_meanfield,
                               rtol=0, atol=1e-10)
    np.testing.assert_allclose(diag.shat, diag.shat_coupling + diag.shat_meanfield,
                               rtol=0, atol=1e-10)
    # identical initial states: the coupling terms vanish at t = 0
    assert diag.fhat_coupling[0] == 0.0 and diag.shat_coupling[0] == 0.0
    assert np.all(diag.sup_diff >= 0) and np.all(diag.sup_diff % 1 == 0)
    assert diag.sup_diff_max == diag.sup_diff.max()
    for ap in paths[:20]:
        assert np.all(ap.infected + ap.uninfected == 1.0)
    # crude a.s. bound on the mean counter gap (loose at this scale)
    lam, horizon = MARKOV.lambda_star, g.horizon
    assert diag.sup_diff_mean <= (lam / math.sqrt(n)) * horizon * math.exp(2 * lam * horizon)


def test_coupled_identical_without_initial_infection():
    g = Grid.from_horizon(2.0, 0.02)
    init = InitialLaw(0.0, MARKOV)
    sol = solve_flln(MARKOV, init, g)
    tr, paths, diag = simulate_coupled(MARKOV, init, 50, sol, seed=2)
    assert len(tr.events) == 0
    assert diag.sup_diff_max == 0.0
    assert np.abs(diag.fhat).max() == 0.0 and np.abs(diag.shat).max() == 0.0
    assert np.abs(diag.fhat_coupling).max() == 0.0


def test_coupled_tightens_with_population_size():
    g = Grid.from_horizon(2.0, 0.02)
    sol = solve_flln(MARKOV, MARKOV_INIT, g)
    means = {}
    for n in (100, 1600):
        ms = [simulate_coupled(MARKOV, MARKOV_INIT, n, sol, seed=s)[2].sup_diff_mean
              for s in (1, 2, 3)]
        means[n] = np.mean(ms)
    assert means[1600] < means[100]


# -- quarantine variant -------------------------------------------------------


def test_quarantine_never_infected_individual_inert():
    g = Grid.from_horizon(1.5, 0.05)
    ref = simulate_population(MARKOV, MARKOV_INIT, 40, g, seed=30,
                              keep_final_state=True)
    k = int(np.nonzero(ref.final_state.never)[0][-1])
    base, variant, diag = simulate_quarantine(MARKOV, MARKOV_INIT, 40, g, seed=30,
                                              quarantined=[k])
    assert np.array_equal(base.fbar, variant.fbar)
    assert np.array_equal(base.sbar, variant.sbar)
    assert np.array_equal(base.infected, variant.infected)
    assert diag.descendants.size == 0 and diag.diverged_count.max() == 0
    assert diag.force_gap.max() == 0.0 and diag.susceptibility_gap.max() == 0.0


def test_quarantine_pathwise_bounds():
    g = Grid.from_horizon(1.5, 0.05)
    lam = MARKOV.lambda_star
    n = 80
    for seed in range(10):
        base, variant, diag = simulate_quarantine(
            MARKOV, MARKOV_INIT, n, g, seed=400 + seed, quarantined=[0, 20])
        assert np.all(diag.force_gap <= lam * diag.diverged_count / n + 1e-12)
        assert np.all(diag.susceptibility_gap <= diag.diverged_count / n + 1e-12)
        assert np.all(np.diff(diag.diverged_count) >= 0)
        assert np.all(np.diff(diag.divergence_times) >= 0)
        assert len(diag.divergence_times) == diag.descendants.size
        # individual 0 starts infected (deterministic seeding), so it is
        # withheld from the variant force from the start
        assert diag.divergence_times.size > 0 and diag.divergence_times[0] == 0.0
        assert 0 in diag.descendants


def test_quarantine_descendant_mean_bound():
    # dominating pure-birth process: E|D(T)| <= exp(lambda_star T)
    g = Grid.from_horizon(1.0, 0.1)
    tot = 0.0
    reps = 1000
    for seed in range(reps):
        _, _, diag = simulate_quarantine(MARKOV, MARKOV_INIT, 40, g,
                                         seed=7000 + seed, quarantined=[3])
        tot += diag.diverged_count[-1]
    assert tot / reps <= math.exp(MARKOV.lambda_star * 1.0)
