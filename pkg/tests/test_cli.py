import json
import os

import numpy as np
import pytest

from epiwane.cli import main
from epiwane.io import read_report, read_table


def write_config(path, **overrides):
    data = {
        "profile": {"family": "sis_indicator", "lambda_base": 2.0,
                    "duration": {"kind": "exponential", "mu": 1.0}},
        "initial": {"p_infected": 0.1},
        "horizon": 1.5,
        "dt": 0.05,
        "population_sizes": [80],
        "replicates": 30,
        "seed": 21,
        "bernoulli_init": True,
        "fclt": {"agents": 300, "driver_samples": 200},
        "output_dir": str(path.parent / "default_out"),
    }
    data.update(overrides)
    path.write_text(json.dumps(data))
    return data


def run(*args):
    return main(list(args))


def test_simulate_reruns_are_byte_identical(tmp_path):
    cfg = tmp_path / "exp.json"
    write_config(cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", str(cfg), "--out", str(a),
               "--threads", "1") == 0
    assert run("simulate", "--config", str(cfg), "--out", str(b),
               "--threads", "1") == 0
    for name in ("trajectory.csv", "events.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta, cols = read_table(str(a / "trajectory.csv"))
    assert meta["seed"] == 21
    assert cols["infected"].dtype == np.int64
    assert np.all(cols["infected"] + cols["uninfected"] == 80)


def test_seed_flag_overrides_config(tmp_path):
    cfg = tmp_path / "exp.json"
    write_config(cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    run("simulate", "--config", str(cfg), "--out", str(a), "--threads", "1")
    run("simulate", "--config", str(cfg), "--out", str(b), "--seed", "1234",
        "--threads", "1")
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()
    meta, _ = read_table(str(b / "trajectory.csv"))
    assert meta["seed"] == 1234


def test_flln_markov_reaches_endemic_level(tmp_path):
    cfg = tmp_path / "exp.json"
    write_config(cfg, horizon=20.0, dt=0.02)
    out = tmp_path / "out"
    assert run("flln", "--config", str(cfg), "--out", str(out),
               "--threads", "1") == 0
    _, cols = read_table(str(out / "flln.csv"))
    # lambda 2, mu 1: the endemic infected fraction is 1 - mu/lambda = 0.5
    assert cols["t"][-1] == pytest.approx(20.0)
    assert 0.49 <= cols["ibar"][-1] <= 0.51


def test_fclt_and_ensemble_then_compare(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    write_config(cfg, replicates=400, population_sizes=[400],
                 fclt={"agents": 3000, "driver_samples": 2500})
    out = tmp_path / "out"
    assert run("fclt", "--config", str(cfg), "--out", str(out),
               "--threads", "1") == 0
    assert run("ensemble", "--config", str(cfg), "--out", str(out),
               "--threads", "1") == 0
    rc = run("compare", "--config", str(cfg), "--out", str(out),
             "--threads", "1")
    assert rc == 0
    report = read_report(str(out / "compare_report.json"))
    assert report["all_pass"] is True
    assert {"metrics", "rate_fit", "ks", "all_pass",
            "fingerprint", "seed"} <= set(report)
    for row in report["metrics"]:
        assert set(row) == {"name", "target", "value", "tol", "pass",
                            "paper_ref"}
    cov = read_report(str(out / "covariance.json"))
    assert len(cov["matrix"]) == 4 * 31
    assert len(cov["diagonal"]) == 4 * 31

    # grossly inflated stored deviations must flip the exit code
    dev = out / "deviations_N400.csv"
    lines = dev.read_text().splitlines()
    doctored = lines[:2]
    for line in lines[2:]:
        parts = line.split(",")
        doctored.append(",".join(parts[:2] + [repr(3.0 * float(v))
                                              for v in parts[2:]]))
    dev.write_text("\n".join(doctored) + "\n")
    assert run("compare", "--config", str(cfg), "--out", str(out),
               "--threads", "1") == 1

    # a config with any different field must be refused outright
    other = tmp_path / "other.json"
    write_config(other, replicates=400, population_sizes=[400],
                 fclt={"agents": 3000, "driver_samples": 2500}, seed=1)
    assert run("compare", "--config", str(other), "--out", str(out),
               "--threads", "1") == 2
    assert "fingerprint mismatch" in capsys.readouterr().err


def test_compare_requires_artifacts(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    write_config(cfg)
    out = tmp_path / "empty"
    out.mkdir()
    assert run("compare", "--config", str(cfg), "--out", str(out),
               "--threads", "1") == 2
    assert "ensemble subcommand" in capsys.readouterr().err


def test_ensemble_thread_count_is_invisible_in_output(tmp_path):
    cfg = tmp_path / "exp.json"
    write_config(cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("ensemble", "--config", str(cfg), "--out", str(a),
               "--threads", "1") == 0
    assert run("ensemble", "--config", str(cfg), "--out", str(b),
               "--threads", "3") == 0
    for name in ("ensemble_N80.csv", "deviations_N80.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_verify_small_config_writes_report(tmp_path):
    cfg = tmp_path / "exp.json"
    write_config(cfg, population_sizes=[100, 200, 400], replicates=400,
                 fclt={"agents": 2500, "driver_samples": 2000})
    out = tmp_path / "out"
    rc = run("verify", "--config", str(cfg), "--out", str(out),
             "--threads", "1")
    report = read_report(str(out / "report.json"))
    names = {row["name"] for row in report["metrics"]}
    assert {"flln.compartment_closure", "flln.markov_ode_gap",
            "fclt.residual", "fclt.cov_psd", "fclt.cov_t0_closed_form",
            "flln.ensemble_mean_band", "rate.slope",
            "coupling.sup_diff_mean", "quarantine.force_gap",
            "quarantine.susceptibility_gap"} <= names
    assert report["rate_fit"] is not None
    assert rc == (0 if report["all_pass"] else 1)
    assert rc == 0


def test_bad_inputs_exit_with_usage_errors(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    write_config(cfg)
    missing = tmp_path / "nope.json"
    assert run("flln", "--config", str(missing)) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run("flln", "--config", str(broken)) == 2
    assert run("flln", "--config", str(cfg), "--threads", "0") == 2
    assert run("flln", "--config", str(cfg), "--seed", "-3") == 2
    with pytest.raises(SystemExit):
        run("frobnicate", "--config", str(cfg))
    capsys.readouterr()


def test_log_level_env_is_honored(tmp_path, monkeypatch, caplog):
    cfg = tmp_path / "exp.json"
    write_config(cfg)
    out = tmp_path / "out"
    monkeypatch.setenv("EPIWANE_LOG", "INFO")
    import logging
    with caplog.at_level(logging.INFO, logger="epiwane"):
        assert run("flln", "--config", str(cfg), "--out", str(out),
                   "--threads", "1") == 0
    assert any("flln" in rec.message for rec in caplog.records)


def test_default_out_dir_comes_from_config(tmp_path):
    cfg = tmp_path / "exp.json"
    data = write_config(cfg)
    assert run("flln", "--config", str(cfg), "--threads", "1") == 0
    assert os.path.exists(os.path.join(data["output_dir"], "flln.csv"))
