# %% [markdown]
# # One planning cycle with the greedy baselines
#
# Run the slot simulator with the shortest-distance (SPG) and least-delay
# (LTG) next-hop rules across a few request loads.

# %%
import dataclasses

from leo_rrm.experiments import ExperimentConfig, TrafficParams, evaluate, sweep_load

cfg = ExperimentConfig(traffic=TrafficParams(per_leo_count=10), seed=0)
for name in ("spg", "ltg"):
    m = evaluate(name, cfg, episode=0)
    print(f"{name}: completion {m.completion_rate:.3f}, delivered {m.delivered}, "
          f"failed {m.failed}, mean delay {m.mean_delay_s:.3f} s")

# %% [markdown]
# Completion rate versus requests per satellite. Each cell is one planning cycle.

# %%
rows = sweep_load(cfg, [5, 10, 20], {"spg": "spg", "ltg": "ltg"})
for r in rows:
    print(r["load"], r["policy"], round(r["completion_rate"], 3))

# %% [markdown]
# A decision trace records every epoch: node, chosen action, mask, delay parts and reward.

# %%
import json
import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "trace.jsonl"
    evaluate("spg", dataclasses.replace(cfg, traffic=TrafficParams(per_leo_count=1)), trace_path=path)
    first = json.loads(path.read_text().splitlines()[0])
print(first)
