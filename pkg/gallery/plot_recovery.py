"""
Recovering simulated parameters
===============================

Simulate one panel from the full model, fit it, and compare the posterior of
the lag weights and of the growth-rate field with the truth.
"""

import matplotlib.pyplot as plt
import numpy as np

from poiar import ModelData, NutsConfig, SimSpec
from poiar.car import noncentered
from poiar.fit import field_draws, fit_model
from poiar.simulate import recovery_model_config, simulate_replicate

# %%
# A 4 x 4 lattice observed for 20 weeks, a fifth of the cells held out.

spec = SimSpec(lattice_rows=4, lattice_cols=4, n_weeks=20, n_socio=1, seed=2)
graph = spec.graph()
config = recovery_model_config(spec)
replicate = simulate_replicate(spec, graph, 0, config)
data = ModelData(graph, replicate.panel, replicate.designs, config)

result = fit_model(data, NutsConfig(n_chains=4, n_warmup=500, n_iter=500, seed=2))
print(result.summary.table.head(8))

# %%
# Posterior lag weights against the values used to simulate.

table = result.summary.table.set_index("parameter")
names = [f"w[{k}]" for k in range(spec.tau)]
fig, ax = plt.subplots(figsize=(5, 3))
ax.errorbar(
    np.arange(spec.tau),
    table.loc[names, "mean"],
    yerr=[
        table.loc[names, "mean"] - table.loc[names, "q2.5"],
        table.loc[names, "q97.5"] - table.loc[names, "mean"],
    ],
    fmt="o",
    label="posterior",
)
ax.plot(np.arange(spec.tau), spec.weights, "x", color="black", label="truth")
ax.set_xticks(np.arange(spec.tau), names)
ax.legend()

# %%
# The growth-rate field of one area over time.

values = result.constrained.reshape(-1, result.constrained.shape[-1])
phi = field_draws(values, result.layout, "phi")
truth = noncentered(replicate.truth.star("phi"), replicate.truth.theta("phi"))
lower, upper = np.quantile(phi[:, 0], [0.025, 0.975], axis=0)

fig, ax = plt.subplots(figsize=(6, 3))
weeks = np.arange(spec.n_weeks)
ax.fill_between(weeks, lower, upper, alpha=0.3, label="95% interval")
ax.plot(weeks, phi[:, 0].mean(axis=0), label="posterior mean")
ax.plot(weeks, truth[0], "k--", label="truth")
ax.set_xlabel("week")
ax.set_ylabel("phi, area 0")
ax.legend()
plt.show()
