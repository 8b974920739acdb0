import numpy as np
import pytest

from epiwane.profiles import (
    Deterministic,
    Exponential,
    GammaDuration,
    InitialLaw,
    ProfileLaw,
    Segments,
    duration_cdf,
    mean_infectivity,
    sample_initial,
    sample_pair,
)
from epiwane.streams import Stream


def _pw_law():
    seg = Segments(
        lambda_values=(1.5, 0.5),
        lambda_gaps=(Exponential(2.0), Deterministic(0.5)),
        gamma_values=(0.0, 0.4, 1.0),
        gamma_gaps=(Deterministic(0.25), Exponential(1.0)),
    )
    return ProfileLaw.piecewise_constant(seg)


ALL_LAWS = [
    ProfileLaw.sis_indicator(2.0, Exponential(1.0)),
    ProfileLaw.sis_indicator(1.0, Deterministic(0.8)),
    ProfileLaw.sis_indicator(3.0, GammaDuration(2.0, 0.5)),
    ProfileLaw.sis_gradual(2.0, Exponential(1.0), 1.0),
    ProfileLaw.sis_gradual(2.0, Deterministic(1.0), 1.0),
    _pw_law(),
]


def test_mean_infectivity_markovian_closed_form():
    law = ProfileLaw.sis_indicator(2.0, Exponential(1.0))
    t = np.linspace(0.0, 5.0, 41)
    np.testing.assert_allclose(mean_infectivity(law, t), 2.0 * np.exp(-t), rtol=1e-12)


def test_gradual_susceptibility_value():
    law = ProfileLaw.sis_gradual(2.0, Deterministic(1.0), 1.0)
    r = sample_pair(law, Stream(7))
    assert r.eta == 1.0
    np.testing.assert_allclose(r.gamma(2.0), 1.0 - np.exp(-1.0), rtol=1e-12)
    assert r.gamma(0.999) == 0.0
    assert r.lam(0.5) == 2.0 and r.lam(1.0) == 0.0


def test_initial_mixture_cdf_atom():
    init = InitialLaw(0.3, ProfileLaw.sis_indicator(2.0, Exponential(1.0)))
    np.testing.assert_allclose(duration_cdf(init, 0.0), 0.7, rtol=1e-12)
    # mass accumulates towards 1 as t grows
    np.testing.assert_allclose(duration_cdf(init, 50.0), 1.0, rtol=1e-9)
    assert duration_cdf(init, -1.0) == 0.0


def test_exponential_duration_mc_mean():
    law = ProfileLaw.sis_indicator(2.0, Exponential(1.0))
    etas = np.array([sample_pair(law, Stream(1000 + m)).eta for m in range(10_000)])
    assert abs(etas.mean() - 1.0) < 0.02
    assert abs(etas.std() - 1.0) < 0.05


@pytest.mark.parametrize("law", ALL_LAWS)
def test_support_ordering_invariant(law):
    # lambda support must end before gamma support begins, bounds must hold
    n = 100_000
    probe = np.linspace(0.0, 6.0, 25)
    for m in range(n):
        r = sample_pair(law, Stream(m))
        assert r.eta > 0
        assert r.gamma_support_start >= r.eta - 1e-12
        if m % 997 == 0:  # full function evaluation on a thinned subset
            lam = r.lam(probe)
            gam = r.gamma(probe)
            assert np.all((lam >= 0) & (lam <= law.lambda_star))
            assert np.all((gam >= 0) & (gam <= 1))
            assert np.all(lam[probe >= r.eta] == 0)
            assert np.all(gam[probe < r.eta] == 0)


def test_piecewise_mean_infectivity_matches_direct_average():
    law = _pw_law()
    t = np.linspace(0.0, 3.0, 16)
    got = mean_infectivity(law, t, mc_samples=4096, seed=11)
    # independent average with a different seed; both estimate the same mean
    n = 20_000
    acc = np.zeros_like(t)
    sq = np.zeros_like(t)
    for m in range(n):
        v = sample_pair(law, Stream(900_000 + m)).lam(t)
        acc += v
        sq += v * v
    ref = acc / n
    se = np.sqrt(np.maximum(sq / n - ref**2, 1e-12) / n + np.maximum(sq / n - ref**2, 1e-12) / 4096)
    assert np.all(np.abs(got - ref) <= 3.5 * se + 1e-9)


def test_piecewise_duration_cdf_deterministic_gaps():
    seg = Segments(
        lambda_values=(1.0, 2.0),
        lambda_gaps=(Deterministic(0.5), Deterministic(0.75)),
        gamma_values=(1.0,),
        gamma_gaps=(),
    )
    law = ProfileLaw.piecewise_constant(seg)
    # eta is exactly 1.25 for every sample
    np.testing.assert_allclose(duration_cdf(law, np.array([1.0, 1.25, 2.0])),
                               [0.0, 1.0, 1.0])


def test_sample_initial_coin_and_never_infected():
    law = ProfileLaw.sis_indicator(2.0, Exponential(1.0))
    init = InitialLaw(0.25, law)
    hits = 0
    n = 40_000
    for m in range(n):
        r = sample_initial(init, Stream(m))
        if r.never_infected:
            assert r.eta == 0.0
            assert np.all(r.gamma(np.array([0.0, 1.0, 5.0])) == 1.0)
            assert np.all(r.lam(np.array([0.0, 1.0, 5.0])) == 0.0)
        else:
            hits += 1
            assert r.eta > 0
    se = np.sqrt(0.25 * 0.75 / n)
    assert abs(hits / n - 0.25) < 3 * se


def test_streams_reproducible():
    law = _pw_law()
    a = sample_pair(law, Stream(99))
    b = sample_pair(law, Stream(99))
    c = sample_pair(law, Stream(100))
    np.testing.assert_array_equal(a.lam_bounds, b.lam_bounds)
    np.testing.assert_array_equal(a.gam_bounds, b.gam_bounds)
    assert not np.array_equal(a.lam_bounds, c.lam_bounds)


def test_validation_errors():
    with pytest.raises(ValueError):
        Exponential(-1.0)
    with pytest.raises(ValueError):
        Deterministic(0.0)
    with pytest.raises(ValueError):
        GammaDuration(2.0, -0.5)
    with pytest.raises(ValueError):
        ProfileLaw.sis_indicator(-2.0, Exponential(1.0))
    with pytest.raises(ValueError):
        ProfileLaw.sis_gradual(2.0, Exponential(1.0), 0.0)
    with pytest.raises(ValueError):
        ProfileLaw.sis_indicator(2.0, Exponential(1.0), lambda_star=1.5)
    with pytest.raises(ValueError):
        InitialLaw(1.5, ProfileLaw.sis_indicator(2.0, Exponential(1.0)))
    with pytest.raises(ValueError):
        Segments(lambda_values=(1.0,), lambda_gaps=(Exponential(1.0),),
                 gamma_values=(1.2,), gamma_gaps=())
    with pytest.raises(ValueError):
        Segments(lambda_values=(0.0,), lambda_gaps=(Exponential(1.0),),
                 gamma_values=(1.0,), gamma_gaps=())
    with pytest.raises(ValueError):
        ProfileLaw("nonsense")


def test_duration_law_finite_means():
    assert Exponential(2.0).mean() == 0.5
    assert Deterministic(1.5).mean() == 1.5
    assert GammaDuration(2.0, 0.5).mean() == 1.0
