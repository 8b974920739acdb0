# Drive the command-line interface end to end on a small configuration:
# simulate one path, solve the limit, build the fluctuation model, run a
# replicate ensemble, then compare the ensemble against the model. Artifacts
# land in demos/output/pipeline; every file embeds the config fingerprint
# and seed, and compare refuses artifacts whose fingerprint does not match.

import json
import os

from epiwane.cli import main
from epiwane.io import read_report

here = os.path.dirname(__file__)
out = os.path.join(here, "output", "pipeline")
os.makedirs(out, exist_ok=True)

config = {
    "profile": {"family": "sis_gradual", "lambda_base": 1.5,
                "duration": {"kind": "gamma", "shape": 2.0, "scale": 0.5},
                "waning_rate": 0.8},
    "initial": {"p_infected": 0.2},
    "horizon": 2.0, "dt": 0.05,
    "population_sizes": [300], "replicates": 200,
    "seed": 2026, "bernoulli_init": True,
    "fclt": {"agents": 1500, "driver_samples": 1200},
    "output_dir": out,
}
cfg_path = os.path.join(out, "config.json")
with open(cfg_path, "w") as fh:
    json.dump(config, fh, indent=2)

for sub in ("simulate", "flln", "fclt", "ensemble", "compare"):
    rc = main([sub, "--config", cfg_path, "--out", out, "--threads", "1"])
    print(f"epiwane {sub:9s} -> exit {rc}")

report = read_report(os.path.join(out, "compare_report.json"))
print(f"\nfingerprint {report['fingerprint']}, seed {report['seed']}")
print(f"all_pass = {report['all_pass']}")
for row in report["metrics"][:6]:
    print(f"  {row['name']:24s} value={row['value']:8.4f} "
          f"target={row['target']:8.4f} pass={row['pass']}")
print(f"  ... {len(report['metrics'])} metrics, "
      f"{len(report['ks'])} KS probes in total")
print(f"\nartifacts in {out}:")
for name in sorted(os.listdir(out)):
    print(f"  {name}")
