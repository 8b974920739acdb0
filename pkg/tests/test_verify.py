import numpy as np
import pytest

from epiwane.config import config_from_dict
from epiwane.fclt import estimate_driver_covariance, sample_driver, \
    solve_fluctuation_ensemble
from epiwane.flln import solve_flln
from epiwane.grid import Grid
from epiwane.simulator import simulate_coupled
from epiwane.verify import (
    QUANTITIES,
    EnsembleSummary,
    Report,
    check_coupling_bounds,
    compare_fclt,
    fit_convergence_rate,
    run_ensemble,
)


def markov_config(**overrides):
    data = {
        "profile": {"family": "sis_indicator", "lambda_base": 2.0,
                    "duration": {"kind": "exponential", "mu": 1.0}},
        "initial": {"p_infected": 0.1},
        "horizon": 3.0,
        "dt": 0.05,
        "bernoulli_init": True,
    }
    data.update(overrides)
    return config_from_dict(data)


@pytest.fixture(scope="module")
def small_ensemble():
    return run_ensemble(markov_config(), 300, 80, seed=42)


def test_summary_shapes_and_limit_agreement(small_ensemble):
    summ = small_ensemble
    g = summ.grid.n
    assert summ.n == 300 and summ.m == 80
    assert summ.fingerprint == markov_config().fingerprint()
    for q in QUANTITIES:
        assert summ.mean[q].shape == (g,)
        assert summ.var[q].shape == (g,)
        assert summ.deviations[q].shape == (80, g)
    assert summ.cross_cov.shape == (4, 4, g)
    # ensemble mean tracks the deterministic limit within a few sigma
    limit = {"fbar": summ.flln.fbar, "sbar": summ.flln.sbar,
             "infected": summ.flln.ibar, "uninfected": summ.flln.ubar}
    for q in QUANTITIES:
        se = np.sqrt(summ.var[q][-1] / summ.m)
        assert abs(summ.mean[q][-1] - limit[q][-1]) < 4 * se
    # equal-time cross covariance is symmetric with nonnegative diagonal
    assert np.allclose(summ.cross_cov, summ.cross_cov.transpose(1, 0, 2))
    assert np.all(summ.cross_cov[range(4), range(4), :] >= 0)


def test_infected_and_uninfected_deviations_cancel(small_ensemble):
    summ = small_ensemble
    total = summ.deviations["infected"] + summ.deviations["uninfected"]
    # counts sum to N exactly, so the sum of deviations is the same
    # deterministic constant sqrt(N) (1 - ibar - ubar) in every replicate
    assert np.max(np.abs(total - total[0])) < 1e-10
    law = markov_config().law()
    slack = np.sqrt(300) * (10 * 1e-10 + (law.lambda_star * summ.grid.dt) ** 2)
    assert np.max(np.abs(total)) <= slack


def test_single_replicate_has_no_variance():
    summ = run_ensemble(markov_config(), 200, 1, seed=7)
    assert summ.var is None
    assert summ.cross_cov is None
    assert summ.deviations["fbar"].shape == (1, summ.grid.n)


def test_zero_prevalence_ensemble_is_exact():
    cfg = markov_config(initial={"p_infected": 0.0})
    summ = run_ensemble(cfg, 150, 5, seed=1)
    for q in QUANTITIES:
        assert np.all(summ.deviations[q] == 0.0)
    assert np.all(summ.mean["infected"] == 0.0)
    assert np.all(summ.mean["uninfected"] == 1.0)
    assert np.all(summ.mean["fbar"] == 0.0)


def test_thread_count_does_not_change_results():
    one = run_ensemble(markov_config(), 150, 12, seed=5, threads=1)
    two = run_ensemble(markov_config(), 150, 12, seed=5, threads=3)
    for q in QUANTITIES:
        assert np.array_equal(one.deviations[q], two.deviations[q])
        assert np.array_equal(one.mean[q], two.mean[q])


def test_run_ensemble_validates_inputs():
    with pytest.raises(ValueError, match="at least 2"):
        run_ensemble(markov_config(), 1, 10, seed=0)
    with pytest.raises(ValueError, match="at least one replicate"):
        run_ensemble(markov_config(), 100, 0, seed=0)


def test_rate_fit_recovers_synthetic_slopes():
    sizes = [100, 400, 1600, 6400]
    half = fit_convergence_rate(sizes, [0.5 / np.sqrt(n) for n in sizes])
    assert abs(half.slope + 0.5) < 1e-12
    assert abs(half.intercept - np.log(0.5)) < 1e-12
    assert abs(half.r_squared - 1.0) < 1e-12
    linear = fit_convergence_rate(sizes, [3.0 / n for n in sizes])
    assert abs(linear.slope + 1.0) < 1e-12
    noisy = fit_convergence_rate(sizes, [0.5 / np.sqrt(n) * f
                                         for n, f in zip(sizes, (1.1, 0.9, 1.05, 0.97))])
    assert -0.65 < noisy.slope < -0.35
    assert noisy.r_squared > 0.9


def test_rate_fit_rejects_bad_inputs():
    with pytest.raises(ValueError, match="at least 3"):
        fit_convergence_rate([100, 400], [0.1, 0.05])
    with pytest.raises(ValueError, match="positive"):
        fit_convergence_rate([100, 400, 1600], [0.1, 0.0, 0.01])
    with pytest.raises(ValueError, match="equal length"):
        fit_convergence_rate([100, 400, 1600], [0.1, 0.05])


def _model_backed_summary(paths, n_pop, m):
    # wrap sampled fluctuation paths as if they were an ensemble's scaled
    # deviations: compare_fclt on a second sample must then accept them
    grid = paths[0].grid
    dev = {
        "fbar": np.stack([p.fhat for p in paths[:m]]),
        "sbar": np.stack([p.shat for p in paths[:m]]),
        "infected": np.stack([p.ihat for p in paths[:m]]),
        "uninfected": np.stack([p.uhat for p in paths[:m]]),
    }
    zeros = {q: np.zeros(grid.n) for q in QUANTITIES}
    return EnsembleSummary(fingerprint="0" * 16, n=n_pop, m=m, grid=grid,
                           flln=None, mean=zeros, var=zeros,
                           deviations=dev, cross_cov=None)


@pytest.fixture(scope="module")
def model_paths():
    cfg = markov_config()
    law, init, grid = cfg.law(), cfg.initial_law(), cfg.grid()
    sol = solve_flln(law, init, grid, tol=cfg.tol)
    cov = estimate_driver_covariance(law, init, sol, 800, grid, seed=13)
    drivers = [sample_driver(cov, 9000 + k) for k in range(2600)]
    return solve_fluctuation_ensemble(drivers, sol, law, init, grid)


def test_compare_accepts_matched_distributions(model_paths):
    summ = _model_backed_summary(model_paths, n_pop=4000, m=1000)
    report = compare_fclt(summ, model_paths[1000:])
    assert report.all_pass, [m.to_dict() for m in report.metrics
                             if not m.passed]
    assert len(report.metrics) == 4 * 4 + 4
    assert len(report.ks) == 4 * 4
    body = report.to_dict()
    assert set(body) == {"metrics", "rate_fit", "ks", "all_pass"}
    assert body["rate_fit"] is None
    for row in body["metrics"]:
        assert set(row) == {"name", "target", "value", "tol", "pass",
                            "paper_ref"}


def test_compare_flags_inflated_variance(model_paths):
    summ = _model_backed_summary(model_paths, n_pop=4000, m=1000)
    for q in QUANTITIES:
        summ.deviations[q] = 1.5 * summ.deviations[q]
    report = compare_fclt(summ, model_paths[1000:])
    var_rows = [m for m in report.metrics if m.name.startswith("var[")]
    assert all(not m.passed for m in var_rows)
    assert not report.all_pass


def test_compare_rejects_grid_mismatch(model_paths):
    cfg = markov_config(dt=0.025)
    summ = run_ensemble(cfg, 100, 3, seed=4)
    with pytest.raises(ValueError, match="grid mismatch"):
        compare_fclt(summ, model_paths)


def test_compare_rejects_off_grid_probes(model_paths):
    summ = _model_backed_summary(model_paths, n_pop=4000, m=500)
    with pytest.raises(ValueError, match="not on the grid"):
        compare_fclt(summ, model_paths[1000:], probes=[1.234567])
    with pytest.raises(ValueError, match="at least 2 replicates"):
        compare_fclt(_model_backed_summary(model_paths, 4000, 1),
                     model_paths[1000:])


def test_variance_scale_is_stable_across_population_sizes():
    # the deviation variance is O(1) in N; grossly growing or shrinking
    # variance would mean the sqrt(N) scaling is off
    cfg = markov_config()
    a = run_ensemble(cfg, 200, 150, seed=31)
    b = run_ensemble(cfg, 800, 150, seed=32)
    for q in QUANTITIES:
        for idx in (a.grid.n // 2, a.grid.n - 1):
            va = a.deviations[q][:, idx].var(ddof=1)
            vb = b.deviations[q][:, idx].var(ddof=1)
            assert 0.6 < va / vb < 1.6, (q, idx, va, vb)


def test_coupling_bound_holds_on_short_horizon():
    law = markov_config().law()
    init = markov_config().initial_law()
    grid = Grid.from_horizon(1.0, 0.05)
    sol = solve_flln(law, init, grid)
    _, _, diag = simulate_coupled(law, init, 120, sol, seed=17)
    report = check_coupling_bounds(diag, law, grid.horizon)
    assert report.all_pass
    record = report.metrics[0]
    assert record.value <= record.target
    # the bound is loose but not astronomically so on a short horizon
    assert record.target < 50.0


def test_quarantine_bounds_hold_pathwise():
    from epiwane.simulator import simulate_quarantine

    cfg = markov_config()
    law, init = cfg.law(), cfg.initial_law()
    grid = Grid.from_horizon(2.0, 0.05)
    base, variant, diag = simulate_quarantine(law, init, 80, grid, seed=23,
                                              quarantined=(0, 1),
                                              bernoulli_init=True)
    report = check_coupling_bounds(diag, law, grid.horizon, n=80)
    assert report.all_pass
    names = {m.name for m in report.metrics}
    assert names == {"quarantine.force_gap", "quarantine.susceptibility_gap"}
    with pytest.raises(ValueError, match="population size"):
        check_coupling_bounds(diag, law, grid.horizon)


def test_bounds_require_some_diagnostics():
    from epiwane.simulator import CouplingDiagnostics

    empty = CouplingDiagnostics()
    with pytest.raises(ValueError, match="neither"):
        check_coupling_bounds(empty, markov_config().law(), 1.0)


def test_report_merge_combines_metrics(model_paths):
    summ = _model_backed_summary(model_paths, n_pop=4000, m=1000)
    first = compare_fclt(summ, model_paths[1000:], probes=[1.5])
    second = Report()
    second.rate_fit = fit_convergence_rate([100, 400, 1600],
                                           [0.3 / np.sqrt(n) for n in (100, 400, 1600)])
    merged = first.merge(second)
    assert merged.rate_fit is not None
    assert merged.to_dict()["rate_fit"]["slope"] == pytest.approx(-0.5)
    with pytest.raises(ValueError, match="rate fit"):
        merged.merge(second)
