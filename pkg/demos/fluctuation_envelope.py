# The Gaussian fluctuation model predicts the spread of finite-N epidemics
# around the deterministic limit: sqrt(N) (I_N/N - ibar) converges to a
# centered Gaussian process. Overlay simulated deviation paths on the model's
# two-sigma envelope and compare pointwise standard deviations.

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from epiwane import (config_from_dict, derive_seed, estimate_driver_covariance,
                     run_ensemble, sample_driver, solve_fluctuation_ensemble)

config = config_from_dict({
    "profile": {"family": "sis_indicator", "lambda_base": 2.0,
                "duration": {"kind": "exponential", "mu": 1.0}},
    "initial": {"p_infected": 0.1},
    "horizon": 3.0, "dt": 0.05,
    "population_sizes": [400], "replicates": 200,
    "seed": 7, "bernoulli_init": True,
})
law, init, grid = config.law(), config.initial_law(), config.grid()

ens = run_ensemble(config, 400, 200, derive_seed(7, 3, 0))
cov = estimate_driver_covariance(law, init, ens.flln, 4000, grid,
                                 seed=derive_seed(7, 1, 0))
paths = solve_fluctuation_ensemble(
    [sample_driver(cov, derive_seed(7, 2, k)) for k in range(1000)],
    ens.flln, law, init, grid)

model = np.stack([p.ihat for p in paths])
sigma = model.std(axis=0, ddof=1)
emp = ens.deviations["infected"]

fig, ax = plt.subplots(figsize=(7, 4))
ax.fill_between(grid.times, -2 * sigma, 2 * sigma, color="#4c72b0",
                alpha=0.25, label="model 2-sigma envelope")
ax.plot(grid.times, emp[:40].T, color="0.4", lw=0.5, alpha=0.6)
ax.plot([], [], color="0.4", lw=0.5, label="simulated deviations (N=400)")
ax.plot(grid.times, emp.std(axis=0, ddof=1), "r-", lw=1.5,
        label="empirical sigma (200 reps)")
ax.plot(grid.times, sigma, "b--", lw=1.5, label="model sigma")
ax.set_xlabel("time")
ax.set_ylabel("sqrt(N) deviation of infected fraction")
ax.legend(frameon=False, fontsize=8)
fig.tight_layout()

for t in (1.0, 2.0, 3.0):
    i = int(round(t / grid.dt))
    print(f"t={t}: empirical sd {emp[:, i].std(ddof=1):.3f}  "
          f"model sd {sigma[i]:.3f}")

out = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out, exist_ok=True)
fig.savefig(os.path.join(out, "fluctuation_envelope.png"), dpi=150)
print(f"wrote {out}/fluctuation_envelope.png")
