"""Slot-wise partially observable bidding episodes over an EnvironmentDay.

An episode has ``H`` decision steps.  At step ``t`` the agent picks a bid
ratio ``a``; every auction in slot ``t`` is bid ``a * utility_estimate``.
Budget is enforced hard: the first auction whose charge would lift the
cumulative cost above ``B`` is not won and the rest of the day is forfeited.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market import charge

OBS_DIM = 7
OBS_FIELDS = ("time_frac", "win_rate", "roi", "cum_utility", "cum_cost", "budget_remaining", "prev_ratio")
FEATURE_DIM = 7
STEP_DIM = FEATURE_DIM + 2


@dataclass
class SlotObservation:
    time_frac: float
    win_rate: float
    roi: float
    cum_utility: float
    cum_cost: float
    budget_remaining: float
    prev_ratio: float

    def as_array(self):
        return np.array([self.time_frac, self.win_rate, self.roi, self.cum_utility,
                         self.cum_cost, self.budget_remaining, self.prev_ratio])

    @classmethod
    def from_array(cls, a):
        return cls(*[float(x) for x in a])


@dataclass
class SlotStats:
    utility: float
    cost: float
    wins: int
    offered: int


@dataclass
class SimulatorState:
    """Full episode state.  Holds the day (market prices included); never fed to a policy."""

    day: object
    t: int = 0
    cum_utility: float = 0.0
    cum_cost: float = 0.0
    cum_wins: int = 0
    cum_offered: int = 0
    prev_ratio: float = 0.0
    done: bool = False
    truncated: bool = False

    def observation(self):
        return make_observation(self.t, self.day.H, self.cum_wins, self.cum_offered, self.cum_utility,
                                self.cum_cost, self.day.budget, self.prev_ratio)


def make_observation(t, H, wins, offered, utility, cost, budget, prev_ratio):
    roi = utility / cost if cost > 0 else float("inf")
    return SlotObservation(
        time_frac=t / H,
        win_rate=wins / offered if offered else 0.0,
        roi=roi,
        cum_utility=utility,
        cum_cost=cost,
        budget_remaining=float(np.clip(1.0 - cost / budget, 0.0, 1.0)),
        prev_ratio=prev_ratio,
    )


def reset_episode(day):
    state = SimulatorState(day)
    return state.observation(), state


def step_slot(state, ratio):
    if state.done:
        raise RuntimeError("episode already finished")
    if ratio < 0 or not np.isfinite(ratio):
        raise ValueError(f"ratio must be finite and nonnegative, got {ratio}")
    day = state.day
    sl = day.slot(state.t)
    bids = ratio * day.utility_estimate[sl]
    m = day.market_price[sl]
    won = bids > m
    costs = np.where(won, charge(bids, m, day.pricing.k(state.t)), 0.0)
    room = day.budget - state.cum_cost
    over = np.nonzero(np.cumsum(costs) > room)[0]
    offered = costs.size
    if over.size:
        cut = over[0]
        won = won.copy()
        won[cut:] = False
        costs = np.where(won, costs, 0.0)
        offered = cut
        state.truncated = True
    util = float(day.realized_utility[sl][won].sum())
    cost = float(costs.sum())
    wins = int(won.sum())
    state.cum_utility += util
    state.cum_cost += cost
    state.cum_wins += wins
    state.cum_offered += offered
    state.prev_ratio = float(ratio)
    state.t += 1
    state.done = state.truncated or state.t >= day.H
    return state.observation(), SlotStats(util, cost, wins, offered), state.done


@dataclass
class EpisodeOutcome:
    utility: float
    cost: float
    budget: float
    roi_target: float
    truncated: bool

    @property
    def roi(self):
        return self.utility / self.cost if self.cost > 0 else float("inf")

    @property
    def roi_feasible(self):
        return self.roi >= self.roi_target

    @property
    def budget_feasible(self):
        return self.cost <= self.budget


def episode_reward(outcome, L=None, B=None):
    """Episode-level reward: total utility if the ROI target is met, else 0."""
    L = outcome.roi_target if L is None else L
    return outcome.utility if outcome.roi >= L else 0.0


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    day_id: int
    policy: str
    H: int
    budget: float
    roi_target: float
    obs: np.ndarray = field(default_factory=lambda: np.zeros((0, OBS_DIM)))
    actions: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slot_cost: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slot_wins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slot_offered: np.ndarray = field(default_factory=lambda: np.zeros(0))
    truncated: bool = False

    def __len__(self):
        return len(self.actions)

    def prefix(self, t):
        """h_t: the (o_i, a_i, r_i) triples for i < t."""
        return self.obs[:t], self.actions[:t], self.rewards[:t]

    @property
    def outcome(self):
        return EpisodeOutcome(float(self.rewards.sum()), float(self.slot_cost.sum()), self.budget,
                              self.roi_target, self.truncated)

    @property
    def episode_reward(self):
        return episode_reward(self.outcome)

    def features(self):
        """Normalized per-step rows [obs features, log(a L), slot utility * H / (L B)]."""
        return step_features(self.obs, self.actions, self.rewards, self.roi_target, self.budget, self.H)

    def to_records(self):
        recs = []
        for t in range(len(self)):
            recs.append({
                "day_id": int(self.day_id), "policy": self.policy, "t": t,
                "H": int(self.H), "budget": float(self.budget), "roi_target": float(self.roi_target),
                "obs": [_json_float(x) for x in self.obs[t]],
                "action": float(self.actions[t]), "reward": float(self.rewards[t]),
                "slot_cost": float(self.slot_cost[t]), "slot_wins": int(self.slot_wins[t]),
                "slot_offered": int(self.slot_offered[t]),
                "truncated": bool(self.truncated and t == len(self) - 1),
            })
        return recs

    @classmethod
    def from_records(cls, recs):
        r0 = recs[0]
        return cls(
            r0["day_id"], r0["policy"], r0["H"], r0["budget"], r0["roi_target"],
            obs=np.array([[_unjson_float(x) for x in r["obs"]] for r in recs]),
            actions=np.array([r["action"] for r in recs]),
            rewards=np.array([r["reward"] for r in recs]),
            slot_cost=np.array([r["slot_cost"] for r in recs]),
            slot_wins=np.array([r["slot_wins"] for r in recs], dtype=float),
            slot_offered=np.array([r["slot_offered"] for r in recs], dtype=float),
            truncated=bool(recs[-1]["truncated"]),
        )


def _json_float(x):
    return "inf" if np.isinf(x) else float(x)


def _unjson_float(x):
    return float("inf") if x == "inf" else float(x)


def obs_features(obs, L, B):
    """Scale-free transform of raw observation rows (..., 7)."""
    obs = np.asarray(obs, dtype=np.float64)
    t, wr, roi, cu, cc, rem, prev = np.moveaxis(obs, -1, 0)
    roi_dev = np.where(cc > 0, np.clip((np.where(cc > 0, roi, L) / L - 1.0) * 10.0, -3.0, 3.0), 0.0)
    prev_feat = np.where(prev > 0, np.log(np.maximum(prev, 1e-12) * L), 0.0)
    return np.stack([t, wr, roi_dev, cu / (L * B), cc / B, rem, prev_feat], axis=-1)


def step_features(obs, actions, rewards, L, B, H):
    f = obs_features(obs, L, B)
    la = np.log(np.maximum(np.asarray(actions, dtype=np.float64), 1e-12) * L)
    rn = np.asarray(rewards, dtype=np.float64) * H / (L * B)
    return np.concatenate([f, la[..., None], rn[..., None]], axis=-1)


def observation_from_prefix(traj, t, slot_sizes):
    """Recompute o_t from the logged prefix alone (slot sizes are public)."""
    if t == 0:
        return make_observation(0, traj.H, 0, 0, 0.0, 0.0, traj.budget, 0.0)
    util = float(traj.rewards[:t].sum())
    cost = float(traj.slot_cost[:t].sum())
    wins = int(traj.slot_wins[:t].sum())
    offered = int(traj.slot_offered[:t].sum())
    return make_observation(t, traj.H, wins, offered, util, cost, traj.budget, float(traj.actions[t - 1]))


def run_episode(day, policy_fn, tag="policy"):
    """Roll ``policy_fn(obs, traj_so_far) -> ratio`` through one day."""
    obs, state = reset_episode(day)
    traj = Trajectory(day.day_id, tag, day.H, day.budget, day.roi_target)
    rows, acts, rews, costs, wins, offered = [], [], [], [], [], []
    done = False
    while not done:
        traj.obs, traj.actions, traj.rewards = np.array(rows + [obs.as_array()]), np.array(acts), np.array(rews)
        a = float(policy_fn(obs, traj))
        rows.append(obs.as_array())
        obs, stats, done = step_slot(state, a)
        acts.append(a)
        rews.append(stats.utility)
        costs.append(stats.cost)
        wins.append(stats.wins)
        offered.append(stats.offered)
    traj.obs = np.array(rows)
    traj.actions = np.array(acts)
    traj.rewards = np.array(rews)
    traj.slot_cost = np.array(costs)
    traj.slot_wins = np.array(wins, dtype=float)
    traj.slot_offered = np.array(offered, dtype=float)
    traj.truncated = state.truncated
    return traj


def replay_actions(day, actions, tag="replay"):
    """Trajectory of a fixed ratio sequence (stops early if the budget runs out)."""
    actions = list(actions)
    return run_episode(day, lambda obs, tr: actions[len(tr.actions)], tag)


class BatchRollout:
    """Lock-step episodes over several days for batched policies.

    ``policy(step_feats, obs_feats, t) -> ratios`` receives the padded step
    features of all past steps (batch, t, STEP_DIM) and current observation
    features (batch, FEATURE_DIM); finished episodes are masked.
    """

    def __init__(self, days, tag="policy"):
        self.days = list(days)
        self.tag = tag

    def run(self, policy):
        days = self.days
        n, H = len(days), max(d.H for d in days)
        states = [reset_episode(d)[1] for d in days]
        trajs = [Trajectory(d.day_id, self.tag, d.H, d.budget, d.roi_target) for d in days]
        buf = {k: [[] for _ in days] for k in ("obs", "act", "rew", "cost", "wins", "off")}
        step_feats = np.zeros((n, H, STEP_DIM))
        L = np.array([d.roi_target for d in days])
        B = np.array([d.budget for d in days])
        for t in range(H):
            alive = [i for i, s in enumerate(states) if not s.done]
            if not alive:
                break
            raw = np.stack([states[i].observation().as_array() for i in range(n)])
            feats = obs_features(raw, L, B)
            ratios = np.asarray(policy(step_feats[:, :t], feats, t), dtype=np.float64)
            for i in alive:
                s = states[i]
                buf["obs"][i].append(raw[i])
                _, st, _ = step_slot(s, float(ratios[i]))
                buf["act"][i].append(float(ratios[i]))
                buf["rew"][i].append(st.utility)
                buf["cost"][i].append(st.cost)
                buf["wins"][i].append(st.wins)
                buf["off"][i].append(st.offered)
                step_feats[i, t] = step_features(raw[i], ratios[i], st.utility, L[i], B[i], days[i].H)
        for i, tr in enumerate(trajs):
            tr.obs = np.array(buf["obs"][i])
            tr.actions = np.array(buf["act"][i])
            tr.rewards = np.array(buf["rew"][i])
            tr.slot_cost = np.array(buf["cost"][i])
            tr.slot_wins = np.array(buf["wins"][i], dtype=float)
            tr.slot_offered = np.array(buf["off"][i], dtype=float)
            tr.truncated = states[i].truncated
        return trajs


def save_trajectories(path, trajs):
    with open(path, "w") as fh:
        for tr in trajs:
            for rec in tr.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trajectories(path):
    groups = {}
    order = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        key = (rec["day_id"], rec["policy"])
        if rec["t"] == 0:
            order.append(key)
            groups[key] = []
        groups[key].append(rec)
    return [Trajectory.from_records(groups[k]) for k in order]
