# %% [markdown]
# # Training the actor-critic next-hop manager
#
# A short training run on the default scenario, compared against the
# distance-greedy baseline on the same episodes. Longer runs use the CLI:
# `leo-rrm train --out runs/s0 --override trainer.episodes=200`.

# %%
import numpy as np
import matplotlib.pyplot as plt

from leo_rrm.experiments import (ExperimentConfig, TrainerParams, evaluate, evaluate_series,
                                 smoothed, train)

cfg = ExperimentConfig(trainer=TrainerParams(episodes=30), seed=0)
result = train(cfg)
rates = np.array([m.completion_rate for m in result.metrics])
print("last 10 episodes, mean completion:", rates[-10:].mean().round(3))

# %%
spg = [m.completion_rate for m in evaluate_series("spg", cfg, range(len(rates)))]
fig, ax = plt.subplots(figsize=(6, 3))
ax.plot(smoothed(rates, 5), label="tf-darm (sampled)")
ax.plot(smoothed(spg, 5), label="spg")
ax.set_xlabel("episode")
ax.set_ylabel("completion rate")
ax.legend()
fig.tight_layout()

# %% [markdown]
# Greedy evaluation of the trained parameters on a held-out episode.

# %%
print(evaluate(result.params, cfg, episode=500).completion_rate)
