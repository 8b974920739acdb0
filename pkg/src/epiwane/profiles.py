"""Infectivity/susceptibility profile laws and their realizations.

An individual's disease history is a random pair of functions of elapsed time
since infection: an infectivity profile ``lambda(s)`` that is positive while
infectious and an susceptibility profile ``gamma(s)`` in [0, 1] that switches
on (possibly gradually, modelling waning immunity) once infectiousness ends.
Every family enforces the ordering

    sup{s : lambda(s) > 0}  <=  inf{s : gamma(s) > 0}

per realization, so reinfection during infectiousness is impossible by
construction.

Built-in families
-----------------
SisIndicator
    lambda(s) = lambda_base * 1{0 <= s < eta}, gamma(s) = 1{s >= eta}, with a
    random duration eta.  With an exponential duration this is the classical
    Markovian SIS model.
SisGradual
    Same infectivity, but susceptibility returns gradually after recovery:
    gamma(s) = (1 - exp(-theta*(s - eta))) * 1{s >= eta}.
PiecewiseConstant
    Both profiles are step functions with deterministic segment values and
    random segment lengths; infectivity segments come first, susceptibility
    segments start where infectivity ends.

Never-infected individuals carry the degenerate pair lambda = 0, gamma = 1
(fully susceptible from time 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.special

from .streams import Stream, uniform_block

__all__ = [
    "Exponential",
    "Deterministic",
    "GammaDuration",
    "Segments",
    "ProfileLaw",
    "InitialLaw",
    "ProfileRealization",
    "sample_pair",
    "sample_initial",
    "mean_infectivity",
    "duration_cdf",
]


# ---------------------------------------------------------------------------
# Duration laws (also used for piecewise segment lengths)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    """Exponential duration with rate mu (mean 1/mu)."""

    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"exponential rate must be positive, got {self.mu}")

    def mean(self) -> float:
        return 1.0 / self.mu

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, -np.expm1(-self.mu * np.maximum(t, 0.0)), 0.0)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, np.exp(-self.mu * np.maximum(t, 0.0)), 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, self.mu * np.exp(-self.mu * np.maximum(x, 0.0)), 0.0)

    def ppf(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.mu

    def sample(self, stream: Stream) -> float:
        return float(-np.log1p(-stream.uniform()) / self.mu)

    def sample_block(self, seed: int, n: int) -> np.ndarray:
        return -np.log1p(-uniform_block(seed, n)) / self.mu


@dataclass(frozen=True)
class Deterministic:
    """Point mass at d."""

    d: float

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"deterministic duration must be positive, got {self.d}")

    def mean(self) -> float:
        return self.d

    def cdf(self, t):
        return (np.asarray(t, dtype=float) >= self.d).astype(float)

    def sf(self, t):
        return (np.asarray(t, dtype=float) < self.d).astype(float)

    def pdf(self, x):
        raise ValueError("deterministic duration has no density")

    def ppf(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.d)

    def sample(self, stream: Stream) -> float:
        return self.d

    def sample_block(self, seed: int, n: int) -> np.ndarray:
        return np.full(n, self.d)


@dataclass(frozen=True)
class GammaDuration:
    """Gamma duration with the given shape and scale (mean shape*scale)."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(
                f"gamma parameters must be positive, got shape={self.shape} scale={self.scale}"
            )

    def mean(self) -> float:
        return self.shape * self.scale

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return scipy.special.gammainc(self.shape, np.maximum(t, 0.0) / self.scale)

    def sf(self, t):
        t = np.asarray(t, dtype=float)
        return scipy.special.gammaincc(self.shape, np.maximum(t, 0.0) / self.scale)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0) / self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            logpdf = (self.shape - 1.0) * np.log(xp) - xp \
                - scipy.special.gammaln(self.shape) - np.log(self.scale)
        out = np.where(x > 0, np.exp(logpdf), 0.0)
        if self.shape == 1.0:
            out = np.where(x == 0, 1.0 / self.scale, out)
        return out

    def ppf(self, u):
        return scipy.special.gammaincinv(self.shape, np.asarray(u, dtype=float)) * self.scale

    def sample(self, stream: Stream) -> float:
        return float(scipy.special.gammaincinv(self.shape, stream.uniform()) * self.scale)

    def sample_block(self, seed: int, n: int) -> np.ndarray:
        return scipy.special.gammaincinv(self.shape, uniform_block(seed, n)) * self.scale


DurationLaw = object  # duck-typed: Exponential | Deterministic | GammaDuration


# ---------------------------------------------------------------------------
# Profile laws
# ---------------------------------------------------------------------------

MAX_SEGMENTS = 8


@dataclass(frozen=True)
class Segments:
    """Segment description for the PiecewiseConstant family.

    ``lambda_values[j]`` holds on the j-th infectivity segment whose random
    length is drawn from ``lambda_gaps[j]``; infectivity ends after the last
    segment and susceptibility segments begin there.  The final susceptibility
    value extends to infinity, so ``gamma_gaps`` has one fewer entry than
    ``gamma_values``.
    """

    lambda_values: Tuple[float, ...]
    lambda_gaps: Tuple[DurationLaw, ...]
    gamma_values: Tuple[float, ...]
    gamma_gaps: Tuple[DurationLaw, ...]

    def __post_init__(self):
        if not 1 <= len(self.lambda_values) <= MAX_SEGMENTS:
            raise ValueError(
                f"need 1..{MAX_SEGMENTS} infectivity segments, got {len(self.lambda_values)}"
            )
        if not 1 <= len(self.gamma_values) <= MAX_SEGMENTS:
            raise ValueError(
                f"need 1..{MAX_SEGMENTS} susceptibility segments, got {len(self.gamma_values)}"
            )
        if len(self.lambda_gaps) != len(self.lambda_values):
            raise ValueError("lambda_gaps must match lambda_values in length")
        if len(self.gamma_gaps) != len(self.gamma_values) - 1:
            raise ValueError("gamma_gaps must have one entry fewer than gamma_values")
        for v in self.lambda_values:
            if not v > 0:
                raise ValueError(f"infectivity segment values must be positive, got {v}")
        for g in self.gamma_values:
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"susceptibility values must lie in [0, 1], got {g}")


@dataclass(frozen=True)
class ProfileLaw:
    family: str
    lambda_base: float = np.nan
    duration: Optional[DurationLaw] = None
    waning_rate: float = np.nan
    segments: Optional[Segments] = None
    lambda_star: float = np.nan

    def __post_init__(self):
        if self.family in ("sis_indicator", "sis_gradual"):
            if not self.lambda_base > 0:
                raise ValueError(f"lambda_base must be positive, got {self.lambda_base}")
            if self.duration is None:
                raise ValueError(f"{self.family} requires a duration law")
            natural_star = self.lambda_base
            if self.family == "sis_gradual" and not self.waning_rate > 0:
                raise ValueError(f"waning_rate must be positive, got {self.waning_rate}")
        elif self.family == "piecewise_constant":
            if self.segments is None:
                raise ValueError("piecewise_constant requires segments")
            natural_star = max(self.segments.lambda_values)
        else:
            raise ValueError(f"unknown profile family {self.family!r}")
        if np.isnan(self.lambda_star):
            object.__setattr__(self, "lambda_star", natural_star)
        elif self.lambda_star < natural_star:
            raise ValueError(
                f"lambda_star={self.lambda_star} is below the family's "
                f"almost-sure infectivity bound {natural_star}"
            )

    @classmethod
    def sis_indicator(cls, lambda_base: float, duration: DurationLaw, lambda_star: float = np.nan):
        return cls("sis_indicator", lambda_base=lambda_base, duration=duration,
                   lambda_star=lambda_star)

    @classmethod
    def sis_gradual(cls, lambda_base: float, duration: DurationLaw, waning_rate: float,
                    lambda_star: float = np.nan):
        return cls("sis_gradual", lambda_base=lambda_base, duration=duration,
                   waning_rate=waning_rate, lambda_star=lambda_star)

    @classmethod
    def piecewise_constant(cls, segments: Segments, lambda_star: float = np.nan):
        return cls("piecewise_constant", segments=segments, lambda_star=lambda_star)


@dataclass(frozen=True)
class InitialLaw:
    """Initial condition: infected fresh at time 0 with probability p_infected.

    Infected individuals draw their profile from ``profile`` with elapsed time
    starting at 0; the rest have never been infected (gamma = 1, lambda = 0,
    duration 0).
    """

    p_infected: float
    profile: ProfileLaw

    def __post_init__(self):
        if not 0.0 <= self.p_infected <= 1.0:
            raise ValueError(f"p_infected must lie in [0, 1], got {self.p_infected}")


# ---------------------------------------------------------------------------
# Realizations
# ---------------------------------------------------------------------------


@dataclass
class ProfileRealization:
    """One sampled (lambda, gamma, eta) triple, evaluable on elapsed-time arrays."""

    family: str
    eta: float
    never_infected: bool = False
    lambda_base: float = 0.0
    waning_rate: float = np.nan
    # piecewise data: breakpoints are absolute elapsed times
    lam_bounds: Optional[np.ndarray] = None   # length m+1, starts at 0, ends at eta
    lam_values: Optional[np.ndarray] = None   # length m
    gam_bounds: Optional[np.ndarray] = None   # length q, starts at eta
    gam_values: Optional[np.ndarray] = None   # length q, last extends to infinity

    def lam(self, s):
        s = np.asarray(s, dtype=float)
        if self.never_infected:
            return np.zeros_like(s)
        if self.family == "piecewise_constant":
            idx = np.searchsorted(self.lam_bounds, s, side="right") - 1
            inside = (idx >= 0) & (idx < len(self.lam_values))
            return np.where(inside, self.lam_values[np.clip(idx, 0, len(self.lam_values) - 1)], 0.0)
        return self.lambda_base * ((s >= 0) & (s < self.eta))

    def gamma(self, s):
        s = np.asarray(s, dtype=float)
        if self.never_infected:
            return np.ones_like(s)
        if self.family == "piecewise_constant":
            idx = np.searchsorted(self.gam_bounds, s, side="right") - 1
            return np.where(idx >= 0, self.gam_values[np.clip(idx, 0, len(self.gam_values) - 1)], 0.0)
        if self.family == "sis_gradual":
            w = s - self.eta
            return np.where(w >= 0, -np.expm1(-self.waning_rate * np.maximum(w, 0.0)), 0.0)
        return (s >= self.eta).astype(float)

    @property
    def gamma_support_start(self) -> float:
        """inf{s : gamma(s) > 0}; >= eta by the ordering constraint."""
        if self.never_infected:
            return 0.0
        if self.family == "piecewise_constant":
            positive = np.nonzero(self.gam_values > 0)[0]
            return float(self.gam_bounds[positive[0]]) if len(positive) else np.inf
        return self.eta


def sample_pair(law: ProfileLaw, stream: Stream) -> ProfileRealization:
    """Draw one (lambda, gamma, eta) realization from ``law``.

    Draw order per family is fixed, so realizations are reproducible from the
    stream seed alone.
    """
    if law.family == "piecewise_constant":
        seg = law.segments
        lam_gaps = np.array([g.sample(stream) for g in seg.lambda_gaps])
        gam_gaps = np.array([g.sample(stream) for g in seg.gamma_gaps])
        lam_bounds = np.concatenate(([0.0], np.cumsum(lam_gaps)))
        eta = float(lam_bounds[-1])
        gam_bounds = eta + np.concatenate(([0.0], np.cumsum(gam_gaps)))
        return ProfileRealization(
            family=law.family, eta=eta,
            lam_bounds=lam_bounds, lam_values=np.asarray(seg.lambda_values, dtype=float),
            gam_bounds=gam_bounds, gam_values=np.asarray(seg.gamma_values, dtype=float),
        )
    eta = law.duration.sample(stream)
    return ProfileRealization(
        family=law.family, eta=eta, lambda_base=law.lambda_base,
        waning_rate=law.waning_rate,
    )


def sample_initial(init: InitialLaw, stream: Stream) -> ProfileRealization:
    """Draw one individual's initial state: infected fresh at 0 w.p. p_infected."""
    if stream.uniform() < init.p_infected:
        return sample_pair(init.profile, stream)
    return ProfileRealization(family="never", eta=0.0, never_infected=True)


# ---------------------------------------------------------------------------
# Law-level summaries
# ---------------------------------------------------------------------------

_MC_SUMMARY_SAMPLES = 8192
_MC_SUMMARY_SEED = 0x5EED


def piecewise_samples(law: ProfileLaw, seed: int, n: int) -> list:
    """n profile realizations with common random numbers keyed by seed."""
    out = []
    for m in range(n):
        out.append(sample_pair(law, Stream(seed + 2 * m + 1)))
    return out


def mean_infectivity(law: ProfileLaw, times, mc_samples: int = _MC_SUMMARY_SAMPLES,
                     seed: int = _MC_SUMMARY_SEED) -> np.ndarray:
    """Mean infectivity profile E[lambda(t)] on an array of elapsed times.

    Closed form for the SIS families; Monte-Carlo with fixed common random
    numbers for PiecewiseConstant (deterministic given ``seed``).
    """
    times = np.asarray(times, dtype=float)
    if law.family in ("sis_indicator", "sis_gradual"):
        return law.lambda_base * law.duration.sf(times) * (times >= 0)
    samples = piecewise_samples(law, seed, mc_samples)
    acc = np.zeros_like(times)
    for r in samples:
        acc += r.lam(times)
    return acc / mc_samples


def duration_cdf(law, times, mc_samples: int = _MC_SUMMARY_SAMPLES,
                 seed: int = _MC_SUMMARY_SEED) -> np.ndarray:
    """CDF of the infection duration eta.

    For an InitialLaw this is the unconditional mixture: never-infected
    individuals have duration 0, so the CDF has an atom of mass
    1 - p_infected at 0.
    """
    times = np.asarray(times, dtype=float)
    if isinstance(law, InitialLaw):
        p = law.p_infected
        return (1.0 - p) * (times >= 0) + p * duration_cdf(law.profile, times,
                                                           mc_samples, seed)
    if law.family in ("sis_indicator", "sis_gradual"):
        return law.duration.cdf(times)
    etas = np.sort([r.eta for r in piecewise_samples(law, seed, mc_samples)])
    return np.searchsorted(etas, times, side="right") / mc_samples
