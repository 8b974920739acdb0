"""Experiment configuration: strict JSON with schema validation.

A configuration file fixes everything an experiment needs: the profile law,
the initial condition, the time grid, the population sizes and replicate
counts, the fluctuation-model options and the output location.  Parsing is
strict: unknown fields are rejected, every error names the offending field
path, and the parsed object round-trips through ``to_json`` unchanged.  The
SHA-256 fingerprint of the canonical serialization is embedded in every
artifact the command line writes, so stored results can be matched back to
the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

from .grid import Grid
from .profiles import (
    Deterministic,
    Exponential,
    GammaDuration,
    InitialLaw,
    ProfileLaw,
    Segments,
)

__all__ = ["ConfigError", "ExperimentConfig", "FcltOptions", "parse_config",
           "config_from_dict"]

DEFAULT_DT = 0.01
DEFAULT_TOL = 1e-10


class ConfigError(ValueError):
    """Configuration rejected; ``path`` names the offending field."""

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


_REQUIRED = object()


class _Object:
    """One JSON object being validated; tracks consumed keys."""

    def __init__(self, mapping: Any, path: str):
        if not isinstance(mapping, dict):
            raise ConfigError(path, f"expected an object, got {type(mapping).__name__}")
        self.mapping = mapping
        self.path = path
        self.seen: set = set()

    def take(self, key: str, default: Any = _REQUIRED) -> Any:
        self.seen.add(key)
        if key not in self.mapping:
            if default is _REQUIRED:
                raise ConfigError(f"{self.path}.{key}", "missing required field")
            return default
        return self.mapping[key]

    def finish(self):
        unknown = sorted(set(self.mapping) - self.seen)
        if unknown:
            raise ConfigError(f"{self.path}.{unknown[0]}", "unknown field")


def _number(value: Any, path: str, *, positive: bool = False,
            lo: Optional[float] = None, hi: Optional[float] = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(path, f"must be positive, got {value}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(path, f"must be <= {hi}, got {value}")
    return value


def _integer(value: Any, path: str, *, lo: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    return value


def _boolean(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    return value


def _duration(data: Any, path: str):
    obj = _Object(data, path)
    kind = _string(obj.take("kind"), f"{path}.kind")
    if kind == "exponential":
        dur = Exponential(_number(obj.take("mu"), f"{path}.mu", positive=True))
    elif kind == "deterministic":
        dur = Deterministic(_number(obj.take("d"), f"{path}.d", positive=True))
    elif kind == "gamma":
        dur = GammaDuration(
            _number(obj.take("shape"), f"{path}.shape", positive=True),
            _number(obj.take("scale"), f"{path}.scale", positive=True))
    else:
        raise ConfigError(f"{path}.kind",
                          f"unknown duration kind {kind!r}; expected "
                          "exponential, deterministic or gamma")
    obj.finish()
    return dur


def _value_list(data: Any, path: str, *, lo: Optional[float] = None) -> Tuple[float, ...]:
    if not isinstance(data, list) or not data:
        raise ConfigError(path, "expected a non-empty array of numbers")
    return tuple(_number(v, f"{path}[{i}]", lo=lo) for i, v in enumerate(data))


def _build_profile(data: Any, path: str) -> ProfileLaw:
    obj = _Object(data, path)
    family = _string(obj.take("family"), f"{path}.family")
    if family == "sis_indicator":
        law = ProfileLaw.sis_indicator(
            _number(obj.take("lambda_base"), f"{path}.lambda_base", positive=True),
            _duration(obj.take("duration"), f"{path}.duration"))
    elif family == "sis_gradual":
        law = ProfileLaw.sis_gradual(
            _number(obj.take("lambda_base"), f"{path}.lambda_base", positive=True),
            _duration(obj.take("duration"), f"{path}.duration"),
            _number(obj.take("waning_rate"), f"{path}.waning_rate", positive=True))
    elif family == "piecewise_constant":
        seg_path = f"{path}.segments"
        seg = _Object(obj.take("segments"), seg_path)
        lam_vals = _value_list(seg.take("lambda_values"), f"{seg_path}.lambda_values", lo=0.0)
        gam_vals = _value_list(seg.take("gamma_values"), f"{seg_path}.gamma_values", lo=0.0)
        lam_gaps_raw = seg.take("lambda_gaps")
        gam_gaps_raw = seg.take("gamma_gaps", [])
        if not isinstance(lam_gaps_raw, list):
            raise ConfigError(f"{seg_path}.lambda_gaps", "expected an array")
        if not isinstance(gam_gaps_raw, list):
            raise ConfigError(f"{seg_path}.gamma_gaps", "expected an array")
        lam_gaps = tuple(_duration(d, f"{seg_path}.lambda_gaps[{i}]")
                         for i, d in enumerate(lam_gaps_raw))
        gam_gaps = tuple(_duration(d, f"{seg_path}.gamma_gaps[{i}]")
                         for i, d in enumerate(gam_gaps_raw))
        seg.finish()
        try:
            segments = Segments(lambda_values=lam_vals, lambda_gaps=lam_gaps,
                                gamma_values=gam_vals, gamma_gaps=gam_gaps)
            law = ProfileLaw.piecewise_constant(segments)
        except ValueError as exc:
            raise ConfigError(seg_path, str(exc)) from None
    else:
        raise ConfigError(f"{path}.family",
                          f"unknown family {family!r}; expected sis_indicator, "
                          "sis_gradual or piecewise_constant")
    obj.finish()
    return law


@dataclass(frozen=True)
class FcltOptions:
    agents: int = 1000
    driver_samples: int = 1000
    corollary_literal: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see ``parse_config``."""

    profile: Dict[str, Any]
    initial: Dict[str, Any]
    horizon: float
    dt: float
    tol: float
    population_sizes: Tuple[int, ...]
    replicates: int
    seed: int
    probes: Optional[Tuple[float, ...]]
    bernoulli_init: bool
    fclt: FcltOptions
    output_dir: str

    def law(self) -> ProfileLaw:
        return _build_profile(self.profile, "profile")

    def initial_law(self) -> InitialLaw:
        p = float(self.initial["p_infected"])
        profile = self.initial.get("profile")
        base = _build_profile(profile, "initial.profile") if profile else self.law()
        return InitialLaw(p, base)

    def grid(self) -> Grid:
        return Grid.from_horizon(self.horizon, self.dt)

    def probe_times(self) -> Tuple[float, ...]:
        """Configured probes, or the quartile defaults snapped to the grid."""
        if self.probes is not None:
            return self.probes
        steps = int(round(self.horizon / self.dt))
        return tuple(round(steps * q / 4) * self.dt for q in (1, 2, 3, 4))

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "profile": self.profile,
            "initial": self.initial,
            "horizon": self.horizon,
            "dt": self.dt,
            "tol": self.tol,
            "population_sizes": list(self.population_sizes),
            "replicates": self.replicates,
            "seed": self.seed,
            "bernoulli_init": self.bernoulli_init,
            "fclt": asdict(self.fclt),
            "output_dir": self.output_dir,
        }
        if self.probes is not None:
            out["probes"] = list(self.probes)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def config_from_dict(data: Any, path: str = "config") -> ExperimentConfig:
    obj = _Object(data, path)
    profile_raw = obj.take("profile")
    law = _build_profile(profile_raw, f"{path}.profile")

    init_obj = _Object(obj.take("initial"), f"{path}.initial")
    p_infected = _number(init_obj.take("p_infected"), f"{path}.initial.p_infected",
                         lo=0.0, hi=1.0)
    init_profile_raw = init_obj.take("profile", None)
    if init_profile_raw is not None:
        _build_profile(init_profile_raw, f"{path}.initial.profile")
    init_obj.finish()

    horizon = _number(obj.take("horizon"), f"{path}.horizon", positive=True)
    dt = _number(obj.take("dt", DEFAULT_DT), f"{path}.dt", positive=True)
    tol = _number(obj.take("tol", DEFAULT_TOL), f"{path}.tol", positive=True)
    if dt * law.lambda_star >= 0.5:
        raise ConfigError(f"{path}.dt",
                          f"dt*lambda_star = {dt * law.lambda_star:g} must stay "
                          "below 0.5 for a stable discretization")
    try:
        Grid.from_horizon(horizon, dt)
    except ValueError as exc:
        raise ConfigError(f"{path}.horizon", str(exc)) from None

    sizes_raw = obj.take("population_sizes", [1000])
    if not isinstance(sizes_raw, list) or not sizes_raw:
        raise ConfigError(f"{path}.population_sizes",
                          "expected a non-empty array of integers")
    sizes = tuple(_integer(v, f"{path}.population_sizes[{i}]", lo=2)
                  for i, v in enumerate(sizes_raw))

    replicates = _integer(obj.take("replicates", 100), f"{path}.replicates", lo=1)
    seed = _integer(obj.take("seed", 0), f"{path}.seed", lo=0)
    bernoulli_init = _boolean(obj.take("bernoulli_init", False),
                              f"{path}.bernoulli_init")

    probes_raw = obj.take("probes", None)
    probes: Optional[Tuple[float, ...]] = None
    if probes_raw is not None:
        if not isinstance(probes_raw, list) or not probes_raw:
            raise ConfigError(f"{path}.probes", "expected a non-empty array of times")
        probes = tuple(_number(v, f"{path}.probes[{i}]", positive=True, hi=horizon)
                       for i, v in enumerate(probes_raw))

    fclt_raw = obj.take("fclt", None)
    if fclt_raw is None:
        fclt = FcltOptions()
    else:
        fclt_obj = _Object(fclt_raw, f"{path}.fclt")
        fclt = FcltOptions(
            agents=_integer(fclt_obj.take("agents", 1000), f"{path}.fclt.agents", lo=100),
            driver_samples=_integer(fclt_obj.take("driver_samples", 1000),
                                    f"{path}.fclt.driver_samples", lo=1),
            corollary_literal=_boolean(fclt_obj.take("corollary_literal", False),
                                       f"{path}.fclt.corollary_literal"))
        fclt_obj.finish()

    output_dir = _string(obj.take("output_dir", "out"), f"{path}.output_dir")
    obj.finish()

    cfg = ExperimentConfig(
        profile=profile_raw, initial={"p_infected": p_infected, **(
            {"profile": init_profile_raw} if init_profile_raw is not None else {})},
        horizon=horizon, dt=dt, tol=tol, population_sizes=sizes,
        replicates=replicates, seed=seed, probes=probes,
        bernoulli_init=bernoulli_init, fclt=fclt, output_dir=output_dir)
    return cfg


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON configuration file.

    Raises ConfigError with the offending field path on any schema violation;
    invalid JSON and missing files surface with the file name.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(path, f"invalid JSON: {exc}") from None
    return config_from_dict(data)
