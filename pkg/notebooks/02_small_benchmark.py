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
# # A reduced benchmark and the confounding probe
#
# Every method on two seeds of a small dataset, then the paired probe on the
# two-regime set.  The acceptance suite runs the same code at full scale.

# %%
import numpy as np

from mirobid.benchmark import run_benchmark
from mirobid.env import obs_features
from mirobid.market import GeneratorConfig, generate_dataset, generate_day, two_regime_config
from mirobid.oracle import expert_for_day
from mirobid.training import TrainConfig, Workspace, train_policy
from mirobid.worldmodel import WorldModelConfig

gen = GeneratorConfig(days=20, auctions_per_day=3000, H=12, train_gsp=4, train_mix=6, test_gsp=4, test_mix=6)
train = TrainConfig(iters=60, world_model=WorldModelConfig(steps=150))

# %%
run = run_benchmark([0, 1], ["pid", "cem", "erm", "miro-p", "miro-d", "mirocl"], gen, train, log=print)
for row in run.report().summary():
    print(f"{row['method']:>7} {row['group']:>8}  mTACR {row['mTACR']:.3f}  mCR@2% {row['mCR_at_gamma']:.3f}")

# %% [markdown]
# ## Paired probe
#
# The same auctions priced with k = 0 and k = 0.9 give two expert histories.
# A memoryless policy cannot tell them apart; the latent policy can.

# %%
cfg = two_regime_config(days=20, auctions_per_day=2000)
ws = Workspace(generate_dataset(cfg), 0)
policies = {m: train_policy(m, ws, 0, TrainConfig(iters=60))[0] for m in ("bc", "mirocl")}
gaps = {m: [] for m in policies}
for d in ws.test_days:
    low, high = (generate_day(cfg, d.day_id, d.split, "MIX", k) for k in cfg.fixed_k)
    t = low.H // 2
    tl, th = expert_for_day(low)[1], expert_for_day(high)[1]
    obs = obs_features(tl.obs[t], low.roi_target, low.budget)
    for m, p in policies.items():
        gaps[m].append(abs(p.act(obs, tl.features()[:t]) - p.act(obs, th.features()[:t])))
print({m: float(np.mean(g)) for m, g in gaps.items()})
