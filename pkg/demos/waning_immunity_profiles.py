# Effect of waning immunity on the limiting dynamics. With indicator
# susceptibility an individual is fully susceptible the moment infectiousness
# ends; with gradual waning the susceptibility recovers as 1 - exp(-theta w)
# in the time w since recovery, which slows reinfection and lowers the
# endemic plateau. Smaller theta = longer-lasting immunity.

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from epiwane import Exponential, Grid, InitialLaw, ProfileLaw, solve_flln

grid = Grid.from_horizon(15.0, 0.02)
duration = Exponential(1.0)

fig, ax = plt.subplots(figsize=(7, 4))

law = ProfileLaw.sis_indicator(2.0, duration)
sol = solve_flln(law, InitialLaw(0.1, law), grid)
ax.plot(grid.times, sol.ibar, "k-", label="indicator (no waning)")
print(f"indicator:      ibar(15) = {sol.ibar[-1]:.4f}")

for theta, style in ((2.0, "--"), (0.5, "-."), (0.2, ":")):
    law = ProfileLaw.sis_gradual(2.0, duration, theta)
    sol = solve_flln(law, InitialLaw(0.1, law), grid)
    ax.plot(grid.times, sol.ibar, style, label=f"gradual, theta={theta}")
    print(f"gradual {theta:4.1f}:   ibar(15) = {sol.ibar[-1]:.4f}")

ax.set_xlabel("time")
ax.set_ylabel("infected fraction (limit)")
ax.legend(frameon=False)
fig.tight_layout()

out = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(out, exist_ok=True)
fig.savefig(os.path.join(out, "waning_immunity_profiles.png"), dpi=150)
print(f"wrote {out}/waning_immunity_profiles.png")
