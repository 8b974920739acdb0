import json

import pytest

from epiwane.config import ConfigError, config_from_dict, parse_config


def base_config():
    return {
        "profile": {
            "family": "sis_indicator",
            "lambda_base": 2.0,
            "duration": {"kind": "exponential", "mu": 1.0},
        },
        "initial": {"p_infected": 0.1},
        "horizon": 3.0,
    }


def test_minimal_config_gets_defaults():
    cfg = config_from_dict(base_config())
    assert cfg.dt == 0.01
    assert cfg.tol == 1e-10
    assert cfg.population_sizes == (1000,)
    assert cfg.replicates == 100
    assert cfg.seed == 0
    assert cfg.bernoulli_init is False
    assert cfg.fclt.agents == 1000
    assert cfg.fclt.corollary_literal is False
    assert cfg.law().lambda_star == 2.0
    assert cfg.initial_law().p_infected == 0.1
    assert cfg.grid().n == 301
    assert cfg.probe_times() == (0.75, 1.5, 2.25, 3.0)


def test_roundtrip_is_identity():
    data = base_config()
    data["probes"] = [1.0, 2.0]
    data["fclt"] = {"agents": 500}
    cfg = config_from_dict(data)
    again = config_from_dict(cfg.to_dict())
    assert again == cfg
    assert again.fingerprint() == cfg.fingerprint()
    # and through the JSON text as well
    third = config_from_dict(json.loads(cfg.to_json()))
    assert third == cfg


def test_fingerprint_sensitive_to_any_field():
    cfg = config_from_dict(base_config())
    bumped = base_config()
    bumped["seed"] = 7
    assert config_from_dict(bumped).fingerprint() != cfg.fingerprint()


def test_negative_rate_names_the_field():
    data = base_config()
    data["profile"]["lambda_base"] = -0.5
    with pytest.raises(ConfigError, match=r"profile\.lambda_base"):
        config_from_dict(data)
    data = base_config()
    data["profile"]["duration"] = {"kind": "exponential", "mu": 0.0}
    with pytest.raises(ConfigError, match=r"profile\.duration\.mu"):
        config_from_dict(data)


def test_unknown_fields_rejected_with_path():
    data = base_config()
    data["extra"] = 1
    with pytest.raises(ConfigError, match=r"config\.extra"):
        config_from_dict(data)
    data = base_config()
    data["profile"]["typo"] = 1
    with pytest.raises(ConfigError, match=r"profile\.typo"):
        config_from_dict(data)
    data = base_config()
    data["fclt"] = {"agents": 500, "wat": True}
    with pytest.raises(ConfigError, match=r"fclt\.wat"):
        config_from_dict(data)


def test_missing_required_field():
    data = base_config()
    del data["horizon"]
    with pytest.raises(ConfigError, match=r"config\.horizon"):
        config_from_dict(data)
    data = base_config()
    del data["profile"]["duration"]
    with pytest.raises(ConfigError, match=r"profile\.duration"):
        config_from_dict(data)


def test_step_stability_invariant():
    # dt * lambda_star must stay below 0.5
    data = base_config()
    data["dt"] = 0.25
    with pytest.raises(ConfigError, match="below 0.5"):
        config_from_dict(data)


def test_horizon_must_align_with_dt():
    data = base_config()
    data["horizon"] = 3.005
    with pytest.raises(ConfigError, match=r"config\.horizon"):
        config_from_dict(data)


def test_probe_bounds_checked():
    data = base_config()
    data["probes"] = [1.0, 4.0]
    with pytest.raises(ConfigError, match=r"probes\[1\]"):
        config_from_dict(data)


def test_initial_can_carry_its_own_profile():
    data = base_config()
    data["initial"]["profile"] = {
        "family": "sis_gradual",
        "lambda_base": 1.0,
        "duration": {"kind": "deterministic", "d": 2.0},
        "waning_rate": 0.5,
    }
    cfg = config_from_dict(data)
    init = cfg.initial_law()
    assert init.profile.lambda_base == 1.0
    assert config_from_dict(cfg.to_dict()) == cfg


def test_piecewise_profile_parses():
    data = base_config()
    data["profile"] = {
        "family": "piecewise_constant",
        "segments": {
            "lambda_values": [0.5, 2.0],
            "lambda_gaps": [
                {"kind": "deterministic", "d": 0.5},
                {"kind": "exponential", "mu": 1.0},
            ],
            "gamma_values": [1.0, 0.2],
            "gamma_gaps": [{"kind": "gamma", "shape": 2.0, "scale": 0.5}],
        },
    }
    cfg = config_from_dict(data)
    assert cfg.law().lambda_star == 2.0
    assert config_from_dict(cfg.to_dict()).fingerprint() == cfg.fingerprint()


def test_parse_config_reads_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(base_config()))
    cfg = parse_config(str(path))
    assert cfg.horizon == 3.0
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        parse_config(str(bad))


def test_type_errors_are_reported():
    data = base_config()
    data["replicates"] = 2.5
    with pytest.raises(ConfigError, match="replicates"):
        config_from_dict(data)
    data = base_config()
    data["bernoulli_init"] = "yes"
    with pytest.raises(ConfigError, match="bernoulli_init"):
        config_from_dict(data)
    data = base_config()
    data["population_sizes"] = []
    with pytest.raises(ConfigError, match="population_sizes"):
        config_from_dict(data)
