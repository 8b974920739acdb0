# One stochastic epidemic path against its deterministic large-population
# limit. The Markovian SIS case doubles as a sanity check because the limit
# also solves a plain ODE with endemic level 1 - mu/lambda = 0.5.

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from epiwane import (Exponential, Grid, InitialLaw, ProfileLaw,
                     simulate_population, solve_flln)

law = ProfileLaw.sis_indicator(2.0, Exponential(1.0))
init = InitialLaw(0.1, law)
grid = Grid.from_horizon(8.0, 0.02)

sol = solve_flln(law, init, grid)

out = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out, exist_ok=True)

fig, ax = plt.subplots(figsize=(7, 4))
for n, color in ((100, "#c44e52"), (1000, "#dd8452"), (10000, "#55a868")):
    traj = simulate_population(law, init, n, grid, seed=n,
                               bernoulli_init=True, record_events=False)
    ax.plot(grid.times, traj.infected / n, color=color, lw=1.0,
            label=f"simulated, N={n}")
    print(f"N={n:6d}: final prevalence {traj.infected[-1] / n:.4f}")
ax.plot(grid.times, sol.ibar, "k--", lw=2.0, label="limit")
print(f"limit:    final prevalence {sol.ibar[-1]:.4f} (endemic level 0.5)")

ax.set_xlabel("time")
ax.set_ylabel("infected fraction")
ax.legend(frameon=False)
fig.tight_layout()
fig.savefig(os.path.join(out, "limit_vs_simulation.png"), dpi=150)
print(f"wrote {out}/limit_vs_simulation.png")
