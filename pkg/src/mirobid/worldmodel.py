"""Latent world model over slot-level bidding episodes.

Components (all share one ParamSet, distinguished by name prefix):

* ``enc``     causal GRU over past step features -> filtering belief q(w_t | h_t)
* ``smooth``  reverse GRU; together with the causal state gives a belief
              that also sees the steps after t (step t itself is left out so
              the belief cannot copy the outcome it is asked to explain)
* ``dyn``     latent transition p(w_t | w_{t-1}, log action_{t-1})
* ``obs``     unit-variance decoder of the standardized slot outcome
* ``act``     Gaussian over the expert's log action
* ``reward``  per-step surrogate whose episode sum regresses the episode reward
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import tensor as T
from .diffcore import (
    MLP,
    Dense,
    GRUCell,
    GaussianParams,
    ParamSet,
    adaptive_update,
    clip_by_global_norm,
    forward_backward,
    gaussian_head,
    gaussian_nll,
    kl_diag_gaussians,
    no_grad,
    reparam_sample,
    unit_gaussian_nll,
)
from .diffcore.tensor import Tensor
from .env import FEATURE_DIM, STEP_DIM, obs_features, step_features
from .seeding import sub_rng

TARGET_DIM = 3


@dataclass
class WorldModelConfig:
    latent_dim: int = 8
    hidden: int = 64
    head_hidden: int = 64
    beta: float = 1e-2
    lr: float = 3e-3
    steps: int = 300
    batch: int = 32
    clip: float = 10.0
    explore_per_day: int = 12
    explore_day_sd: float = 0.25
    explore_step_sd: float = 0.1
    refresh_steps: int = 20

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# batches


@dataclass
class EpisodeBatch:
    """Padded arrays for a list of trajectories (B episodes, T = max length)."""

    steps: np.ndarray  # (B, T, STEP_DIM) step features
    obs: np.ndarray  # (B, T, FEATURE_DIM) observation features
    log_action: np.ndarray  # (B, T) log of the scale-free action a*L
    target: np.ndarray  # (B, T, TARGET_DIM) raw slot outcome
    mask: np.ndarray  # (B, T)
    expert: np.ndarray  # (B,)
    episode_reward: np.ndarray  # (B,) in per-slot units, see episode_reward_units
    day_ids: np.ndarray

    @property
    def B(self):
        return self.steps.shape[0]

    @property
    def T(self):
        return self.steps.shape[1]

    def take(self, idx):
        idx = np.asarray(idx)
        return EpisodeBatch(self.steps[idx], self.obs[idx], self.log_action[idx], self.target[idx],
                            self.mask[idx], self.expert[idx], self.episode_reward[idx], self.day_ids[idx])


def slot_targets(traj):
    H, L, B = traj.H, traj.roi_target, traj.budget
    offered = np.maximum(traj.slot_offered, 1.0)
    return np.stack([traj.rewards * H / (L * B), traj.slot_cost * H / B, traj.slot_wins / offered], axis=-1)


def episode_reward_units(traj):
    """Episode reward in units of the average per-slot budget value L*B/H."""
    return traj.episode_reward * traj.H / (traj.roi_target * traj.budget)


def make_batch(trajs, horizon=None):
    T_ = horizon or max(t.H for t in trajs)
    n = len(trajs)
    steps = np.zeros((n, T_, STEP_DIM))
    obs = np.zeros((n, T_, FEATURE_DIM))
    la = np.zeros((n, T_))
    tgt = np.zeros((n, T_, TARGET_DIM))
    mask = np.zeros((n, T_))
    for i, tr in enumerate(trajs):
        k = len(tr)
        steps[i, :k] = tr.features()
        obs[i, :k] = obs_features(tr.obs, tr.roi_target, tr.budget)
        la[i, :k] = np.log(np.maximum(tr.actions, 1e-12) * tr.roi_target)
        tgt[i, :k] = slot_targets(tr)
        mask[i, :k] = 1.0
    expert = np.array([tr.policy == "expert" for tr in trajs], dtype=float)
    rH = np.array([episode_reward_units(tr) for tr in trajs])
    days = np.array([tr.day_id for tr in trajs])
    return EpisodeBatch(steps, obs, la, tgt, mask, expert, rH, days)


# ---------------------------------------------------------------------------
# the encoder (also copied into policies)


class LatentEncoder:
    def __init__(self, params, rng, latent_dim=8, hidden=64, prefix="enc", with_smoother=True):
        self.D, self.hidden, self.prefix = latent_dim, hidden, prefix
        self.fwd = GRUCell(params, f"{prefix}.gru", STEP_DIM, hidden, rng)
        self.head = Dense(params, f"{prefix}.head", hidden, 2 * latent_dim, rng, scale=0.1)
        self.with_smoother = with_smoother
        if with_smoother:
            self.bwd = GRUCell(params, "smooth.gru", STEP_DIM, hidden, rng)
            self.smooth_head = Dense(params, "smooth.head", 2 * hidden, 2 * latent_dim, rng, scale=0.1)

    def _run(self, cell, P, xs, mask, reverse=False):
        Bn, T_ = xs.shape[0], xs.shape[1]
        h = cell.initial(Bn)
        out = [None] * T_
        order = range(T_ - 1, -1, -1) if reverse else range(T_)
        for t in order:
            h = cell(P, xs[:, t, :], h)
            if reverse:
                # padded tail steps keep the backward state at zero
                h = h * Tensor(mask[:, t:t + 1])
            out[t] = h
        return out

    def filtered_hidden(self, P, steps, mask):
        """Hidden state summarizing steps < t, for every t (list of (B, hidden))."""
        xs = T.as_tensor(steps)
        T_ = xs.shape[1]
        hs = self._run(self.fwd, P, xs[:, : max(T_ - 1, 0), :], mask) if T_ > 1 else []
        return [self.fwd.initial(xs.shape[0])] + hs

    def filtering(self, P, steps, mask):
        """Filtering beliefs, flattened to (B*T, D)."""
        hid = self.filtered_hidden(P, steps, mask)
        flat = T.stack(hid, axis=1).reshape(-1, self.hidden)
        return gaussian_head(self.head(P, flat), self.D)

    def smoothing(self, P, steps, mask):
        xs = T.as_tensor(steps)
        Bn, T_ = xs.shape[0], xs.shape[1]
        fwd = self.filtered_hidden(P, steps, mask)
        bwd = self._run(self.bwd, P, xs, mask, reverse=True)
        zero = self.bwd.initial(Bn)
        # belief at t sees steps < t (forward) and steps > t (backward)
        after = [bwd[t + 1] if t + 1 < T_ else zero for t in range(T_)]
        flat = T.concat([T.stack(fwd, axis=1), T.stack(after, axis=1)], axis=-1).reshape(-1, 2 * self.hidden)
        return gaussian_head(self.smooth_head(P, flat), self.D)


# ---------------------------------------------------------------------------


class WorldModel:
    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg or WorldModelConfig()
        c = self.cfg
        rng = sub_rng(seed, "init", "world-model")
        self.params = ParamSet()
        P = self.params
        D = c.latent_dim
        self.encoder = LatentEncoder(P, rng, D, c.hidden)
        self.dyn = MLP(P, "dyn", [D + 1, c.head_hidden, 2 * D], rng, out_scale=0.1)
        self.obs_dec = MLP(P, "obs", [D + FEATURE_DIM + 1, c.head_hidden, TARGET_DIM], rng)
        self.act_dec = MLP(P, "act", [D + FEATURE_DIM, c.head_hidden, 2], rng, out_scale=0.1)
        self.reward = MLP(P, "reward", [FEATURE_DIM + 1 + D, c.head_hidden, 1], rng, out_scale=0.1)
        # standardization of decoder targets, fitted once from data
        self.target_mean = np.zeros(TARGET_DIM)
        self.target_std = np.ones(TARGET_DIM)

    @property
    def D(self):
        return self.cfg.latent_dim

    def copy(self):
        """Independent parameters; layer objects only hold names and are shared."""
        out = copy.copy(self)
        out.params = self.params.copy()
        out.target_mean = self.target_mean.copy()
        out.target_std = self.target_std.copy()
        return out

    def fit_target_scaler(self, batch):
        m = batch.mask.astype(bool)
        y = batch.target[m]
        self.target_mean = y.mean(0)
        self.target_std = np.maximum(y.std(0), 1e-6)

    def meta(self):
        return {"config": self.cfg.to_dict(), "target_mean": self.target_mean.tolist(),
                "target_std": self.target_std.tolist(),
                "components": ["enc", "smooth", "dyn", "obs", "act", "reward"]}

    def load_meta(self, meta):
        self.target_mean = np.asarray(meta["target_mean"])
        self.target_std = np.asarray(meta["target_std"])

    # -- inference ------------------------------------------------------

    def infer_latent(self, steps, mask=None, mode="filtering", P=None):
        """Beliefs (mean, log_std) of shape (B, T, D) for a batch of step features.

        ``steps`` may have zero length in time; the result then is empty.  A
        length-1 query returns the step-0 prior.
        """
        steps = np.asarray(steps, dtype=np.float64)
        if steps.ndim == 2:
            steps = steps[None]
        if mask is None:
            mask = np.ones(steps.shape[:2])
        Bn, T_ = steps.shape[:2]
        if T_ == 0:
            return np.zeros((Bn, 0, self.D)), np.zeros((Bn, 0, self.D))
        P = P or self.params.constants()
        with no_grad():
            g = (self.encoder.filtering if mode == "filtering" else self.encoder.smoothing)(P, steps, mask)
        return g.mean.data.reshape(Bn, T_, self.D), g.log_std.data.reshape(Bn, T_, self.D)

    def prior_at_start(self):
        mean, log_std = self.infer_latent(np.zeros((1, 1, STEP_DIM)))
        return mean[0, 0], log_std[0, 0]

    def latent_prior_rollout(self, omega0, log_actions, P=None):
        """Chain the latent dynamics from ``omega0`` using each action's mean output."""
        P = P or self.params.constants()
        out = []
        w = np.asarray(omega0, dtype=np.float64)[None]
        with no_grad():
            for la in log_actions:
                g = gaussian_head(self.dyn(P, Tensor(np.concatenate([w, [[la]]], axis=1))), self.D)
                out.append(GaussianParams(g.mean.data[0], g.log_std.data[0]))
                w = g.mean.data
        return out

    # -- losses ---------------------------------------------------------

    def vib_terms(self, P, batch, noise, mode="filtering", beta=None):
        """Per-component VIB loss terms (tensors), averaged over valid steps."""
        beta = self.cfg.beta if beta is None else beta
        Bn, T_, D = batch.B, batch.T, self.D
        q = (self.encoder.filtering if mode == "filtering" else self.encoder.smoothing)(P, batch.steps, batch.mask)
        w = reparam_sample(q, noise.reshape(-1, D))
        w3 = w.reshape(Bn, T_, D)
        mask = batch.mask.reshape(-1)
        n = max(mask.sum(), 1.0)
        obs_f = batch.obs.reshape(-1, FEATURE_DIM)
        la = batch.log_action.reshape(-1, 1)

        y = ((batch.target - self.target_mean) / self.target_std).reshape(-1, TARGET_DIM)
        pred = self.obs_dec(P, T.concat([w, Tensor(obs_f), Tensor(la)], axis=-1))
        obs_nll = (unit_gaussian_nll(y, pred) * mask).sum() / n

        act_mask = (batch.mask * batch.expert[:, None]).reshape(-1)
        act_g = gaussian_head(self.act_dec(P, T.concat([w, Tensor(obs_f)], axis=-1)), 1)
        act_nll = (gaussian_nll(la, act_g) * act_mask).sum() / max(act_mask.sum(), 1.0)

        if T_ > 1:
            prev = T.concat([w3[:, :-1, :], Tensor(batch.log_action[:, :-1, None])], axis=-1).reshape(-1, D + 1)
            dyn = self.dyn(P, prev).reshape(Bn, T_ - 1, 2 * D)
            zeros = Tensor(np.zeros((Bn, 1, 2 * D)))
            prior_out = T.concat([zeros, dyn], axis=1).reshape(-1, 2 * D)
        else:
            prior_out = Tensor(np.zeros((Bn, 2 * D)))
        prior = gaussian_head(prior_out, D)
        kl = (kl_diag_gaussians(q, prior) * mask).sum() / n
        total = obs_nll + act_nll + kl * beta
        return {"total": total, "obs_nll": obs_nll, "act_nll": act_nll, "kl": kl}

    def vib_loss(self, P, batch, noise, mode="filtering", beta=None):
        return self.vib_terms(P, batch, noise, mode, beta)["total"]

    def reward_per_step(self, P, obs, log_action, omega):
        """r_theta for (B, T, .) arrays/tensors -> (B, T) tensor."""
        obs, omega, la = T.as_tensor(obs), T.as_tensor(omega), T.as_tensor(log_action)
        Bn, T_ = obs.shape[0], obs.shape[1]
        x = T.concat([obs, la.reshape(Bn, T_, 1), omega], axis=-1)
        return self.reward(P, x.reshape(-1, x.shape[-1])).reshape(Bn, T_)

    def reward_loss(self, P, obs, log_action, mask, omega, target):
        """Mean over episodes of (target - sum_t r_theta)^2."""
        r = self.reward_per_step(P, obs, log_action, omega)
        total = (r * Tensor(mask)).sum(axis=1)
        d = total - Tensor(target)
        return (d * d).mean()

    # -- environment latents --------------------------------------------

    def environment_latents(self, expert_trajs):
        """Per-day latent sequence: filtered means along the expert trajectory, (H, D)."""
        b = make_batch(expert_trajs)
        mean, _ = self.infer_latent(b.steps, b.mask)
        return {int(tr.day_id): mean[i] for i, tr in enumerate(expert_trajs)}


# ---------------------------------------------------------------------------
# training


def exploration_rollouts(day, expert_actions, n, rng, day_sd, step_sd):
    """Rollouts jittered around the expert's log actions."""
    from .env import replay_actions

    out = []
    la = np.log(np.maximum(np.asarray(expert_actions), 1e-12) * day.roi_target)
    for _ in range(n):
        jitter = la + day_sd * rng.standard_normal() + step_sd * rng.standard_normal(la.size)
        out.append(replay_actions(day, np.exp(jitter) / day.roi_target, tag="explore"))
    return out


class WorldModelTrainer:
    """Holds the episode pool and runs interleaved VIB / reward-surrogate steps."""

    def __init__(self, model, expert_trajs, extra_trajs, seed=0, fit_scaler=True):
        self.model = model
        self.expert = {int(t.day_id): t for t in expert_trajs}
        self.pool = list(expert_trajs) + list(extra_trajs)
        self.rng = sub_rng(seed, "world-model", "batches")
        self.noise_rng = sub_rng(seed, "world-model", "noise")
        self.log = []
        self._latents = None
        self._rebuild()
        if fit_scaler:
            model.fit_target_scaler(self.batch)

    def _rebuild(self):
        H = max(t.H for t in self.pool)
        self.batch = make_batch(self.pool, H)
        self.pool_days = self.batch.day_ids

    def add(self, trajs):
        self.pool.extend(trajs)
        self._rebuild()

    def latents(self):
        if self._latents is None:
            self._latents = self.model.environment_latents(list(self.expert.values()))
        return self._latents

    def _omega_for(self, day_ids):
        lat = self.latents()
        return np.stack([lat[int(d)] for d in day_ids])

    def vib_step(self):
        m, c = self.model, self.model.cfg
        idx = self.rng.choice(self.batch.B, size=min(c.batch, self.batch.B), replace=False)
        b = self.batch.take(np.sort(idx))
        loss = 0.0
        grads_total = {}
        for mode in ("filtering", "smoothing"):
            noise = self.noise_rng.standard_normal((b.B, b.T, m.D))
            val, g = forward_backward(lambda P, X: m.vib_loss(P, b, noise, mode), {}, m.params)
            loss += val
            for k, v in g.items():
                grads_total[k] = grads_total.get(k, 0.0) + v
        self._latents = None
        grads = {k: v for k, v in grads_total.items() if not k.startswith("reward.")}
        grads, _ = clip_by_global_norm(grads, c.clip)
        adaptive_update(m.params, grads, c.lr)
        return loss

    def reward_step(self):
        m, c = self.model, self.model.cfg
        idx = np.sort(self.rng.choice(self.batch.B, size=min(c.batch, self.batch.B), replace=False))
        b = self.batch.take(idx)
        omega = self._omega_for(b.day_ids)
        val, g = forward_backward(
            lambda P, X: m.reward_loss(P, b.obs, b.log_action, b.mask, omega, b.episode_reward), {}, m.params)
        grads = {k: v for k, v in g.items() if k.startswith("reward.")}
        grads, _ = clip_by_global_norm(grads, c.clip)
        adaptive_update(m.params, grads, c.lr)
        return val

    def train(self, steps=None, vib=True):
        steps = self.model.cfg.steps if steps is None else steps
        for i in range(steps):
            rec = {"step": len(self.log)}
            if vib:
                rec["vib"] = self.vib_step()
            rec["reward"] = self.reward_step()
            self.log.append(rec)
        return self.log

    def reward_fit_error(self):
        """RMS error of the surrogate episode sum over the whole pool."""
        b = self.batch
        omega = self._omega_for(b.day_ids)
        with no_grad():
            r = self.model.reward_per_step(self.model.params.constants(), b.obs, b.log_action, omega).data
        return float(np.sqrt((((r * b.mask).sum(1) - b.episode_reward) ** 2).mean()))


def step_feature_row(traj, t):
    return step_features(traj.obs[t], traj.actions[t], traj.rewards[t], traj.roi_target, traj.budget, traj.H)
