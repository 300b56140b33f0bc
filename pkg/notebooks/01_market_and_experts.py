# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Market days, hindsight experts and the rule-based baselines
#
# One synthetic day of each mechanism, the slot-wise expert solved on the
# ratio grid, the best constant ratio, and PID run on the same days.

# %%
import numpy as np

from mirobid.baselines import PidPolicy
from mirobid.market import GeneratorConfig, generate_day
from mirobid.metrics import competitive_ratio
from mirobid.oracle import best_constant_ratio, day_grid, expert_for_day

cfg = GeneratorConfig(auctions_per_day=5000, H=12)
days = {mech: generate_day(cfg, i, mechanism=mech) for i, mech in enumerate(["GSP", "MIX"])}

# %% [markdown]
# ## The days
#
# Budget and ROI floor are calibrated per day; a MIX day prices each slot with
# its own k between second and first price.

# %%
for mech, d in days.items():
    print(f"{mech}: {d.n_auctions} auctions, H={d.H}, B={d.budget:.1f}, L={d.roi_target:.3f}")
    print("  k per slot:", np.round(d.k_schedule, 2))

# %% [markdown]
# ## Experts against constant ratios and PID

# %%
for mech, d in days.items():
    rec, traj = expert_for_day(d)
    ratio, const_val = best_constant_ratio(d, day_grid(d))
    pid = PidPolicy().run(d).outcome
    print(f"{mech}: expert U*={rec.utility:.1f} (ROI/L {rec.utility / rec.cost / d.roi_target:.3f}, "
          f"bound gap {rec.gap:.2f}, {rec.method})")
    print(f"  best constant ratio {ratio:.3f}: CR {competitive_ratio(const_val, rec.utility):.3f}")
    print(f"  PID: CR {competitive_ratio(pid.utility, rec.utility):.3f}, ROI/L {pid.roi / d.roi_target:.3f}")
    print("  expert ratios x L:", np.round(np.asarray(rec.ratios) * d.roi_target, 2))
