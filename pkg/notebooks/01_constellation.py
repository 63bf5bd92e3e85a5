# %% [markdown]
# # Constellation geometry and inter-satellite links
#
# Build the 66-satellite polar constellation, propagate it for one planning
# cycle and look at how the link graph changes from slot to slot.

# %%
import numpy as np
import matplotlib.pyplot as plt

from leo_rrm.constellation import ConstellationSpec, build_constellation, neighbor_roles, propagate

spec = ConstellationSpec.iridium()
roster = build_constellation(spec)
print(len(roster), "satellites, period", round(roster.period_s / 60, 1), "min")

# %% [markdown]
# Each satellite has up to four links: fore and aft in its own plane, right and
# left to the adjacent planes. Cross-plane links drop above the polar cutoff.

# %%
snap = propagate(roster, 0, 60.0)
print("roles of satellite 0:", neighbor_roles(snap, 0))
links_per_slot = [int(propagate(roster, s, 60.0).present().sum()) for s in range(60)]
print("directed links per slot: min", min(links_per_slot), "max", max(links_per_slot))

# %%
fig, ax = plt.subplots(figsize=(6, 3))
ax.plot(links_per_slot)
ax.set_xlabel("slot")
ax.set_ylabel("directed links")
fig.tight_layout()

# %% [markdown]
# Link lengths: intra-plane links are fixed, cross-plane links shrink toward the poles.

# %%
d = snap.distances[snap.present()]
print("link length km: min %.0f, median %.0f, max %.0f" % (d.min(), np.median(d), d.max()))
