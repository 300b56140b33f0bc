"""Latent-conditioned bidding policy.

The policy owns a copy of the world model's causal encoder.  At step t it
samples a belief w_t from the encoder (history of steps < t) and emits a
Gaussian over the log of the scale-free action a*L given the current
observation features and w_t.  With the latent disabled the same network
sees zeros in place of w_t, which makes it a memoryless policy pi(a | o_t).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import tensor as T
from .diffcore import (
    MLP,
    ParamSet,
    gaussian_head,
    gaussian_nll,
    kl_diag_gaussians,
    no_grad,
    reparam_sample,
)
from .diffcore.gaussian import GaussianParams
from .diffcore.tensor import Tensor
from .env import FEATURE_DIM, STEP_DIM, BatchRollout
from .seeding import sub_rng
from .worldmodel import LatentEncoder, make_batch


@dataclass
class PolicyConfig:
    latent_dim: int = 8
    hidden: int = 64
    head_hidden: int = 64
    use_latent: bool = True
    init_log_std: float = float(np.log(0.15))

    def to_dict(self):
        return asdict(self)


class CausalPolicy:
    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg or PolicyConfig()
        c = self.cfg
        rng = sub_rng(seed, "init", "policy")
        self.params = ParamSet()
        self.encoder = LatentEncoder(self.params, rng, c.latent_dim, c.hidden, with_smoother=False)
        self.pi = MLP(self.params, "pi", [FEATURE_DIM + c.latent_dim, c.head_hidden, 1], rng, out_scale=0.01)
        self.params.add("pi.log_std", np.full(1, c.init_log_std))
        self.value = MLP(self.params, "value", [FEATURE_DIM + c.latent_dim, c.head_hidden, 1], rng, out_scale=0.1)

    @property
    def D(self):
        return self.cfg.latent_dim

    def load_encoder(self, world_model):
        """Initialize the encoder copy from a trained world model."""
        for name in self.params.names():
            if name.startswith("enc."):
                self.params[name] = world_model.params[name].copy()

    # -- distributions ----------------------------------------------------

    def latent(self, P, steps, mask, noise):
        """Sampled beliefs (B*T, D) and the filtering Gaussian they come from."""
        q = self.encoder.filtering(P, steps, mask)
        if not self.cfg.use_latent:
            return Tensor(np.zeros(q.mean.shape)), q
        return reparam_sample(q, noise.reshape(-1, self.D)), q

    def action_dist(self, P, obs_flat, w):
        x = T.concat([T.as_tensor(obs_flat), w], axis=-1)
        mean = self.pi(P, x)
        log_std = P["pi.log_std"] + mean * 0.0
        return GaussianParams(mean, log_std)

    def value_of(self, P, obs_flat, w):
        x = T.concat([T.as_tensor(obs_flat), T.stop_gradient(w)], axis=-1)
        return self.value(P, x).reshape(-1)

    def log_prob(self, P, batch, latent_noise):
        """log pi(a_t | o_t, w_t) for each padded step, flattened (B*T,)."""
        w, _ = self.latent(P, batch.steps, batch.mask, latent_noise)
        g = self.action_dist(P, batch.obs.reshape(-1, FEATURE_DIM), w)
        return -gaussian_nll(batch.log_action.reshape(-1, 1), g), w

    # -- acting -----------------------------------------------------------

    def actor(self, rng=None, deterministic=False):
        """Stateful callback for BatchRollout; records the noise it draws."""
        return _Actor(self, rng, deterministic)

    def act(self, obs_features, step_history, noise=None, deterministic=True):
        """Ratio-free action log(a*L) for one history (steps < t, current obs)."""
        steps = np.asarray(step_history, dtype=np.float64).reshape(1, -1, STEP_DIM)
        obs = np.asarray(obs_features, dtype=np.float64).reshape(1, 1, -1)
        full = np.concatenate([steps, np.zeros((1, 1, steps.shape[2]))], axis=1)
        mask = np.ones(full.shape[:2])
        P = self.params.constants()
        with no_grad():
            q = self.encoder.filtering(P, full, mask)
            mean_w, log_std_w = q.mean.data[-1:], q.log_std.data[-1:]
            if not self.cfg.use_latent:
                w = np.zeros_like(mean_w)
            elif deterministic or noise is None:
                w = mean_w
            else:
                w = mean_w + np.exp(log_std_w) * noise[0]
            g = self.action_dist(P, obs.reshape(1, -1), Tensor(w))
            la = g.mean.data[0, 0]
            if not deterministic and noise is not None:
                la = la + float(np.exp(g.log_std.data[0, 0])) * noise[1]
        return float(la)


class _Actor:
    def __init__(self, policy, rng, deterministic):
        self.policy, self.rng, self.det = policy, rng, deterministic
        self.P = policy.params.constants()
        self.h = None
        self.latent_noise = []
        self.action_noise = []

    def __call__(self, step_feats, obs_feats, t):
        pol = self.policy
        n = obs_feats.shape[0]
        with no_grad():
            if self.h is None:
                self.h = pol.encoder.fwd.initial(n)
            else:
                self.h = pol.encoder.fwd(self.P, Tensor(step_feats[:, t - 1, :]), self.h)
            q = gaussian_head(pol.encoder.head(self.P, self.h), pol.D)
            if self.det:
                eps_w, eps_a = np.zeros((n, pol.D)), np.zeros(n)
            else:
                eps_w, eps_a = self.rng.standard_normal((n, pol.D)), self.rng.standard_normal(n)
            if pol.cfg.use_latent:
                w = q.mean.data + np.exp(q.log_std.data) * eps_w
            else:
                w = np.zeros((n, pol.D))
            g = pol.action_dist(self.P, obs_feats, Tensor(w))
            la = g.mean.data[:, 0] + np.exp(g.log_std.data[:, 0]) * eps_a
        self.latent_noise.append(eps_w)
        self.action_noise.append(eps_a)
        # scale-free action -> ratio happens in the rollout wrapper
        return la

    def noise_array(self, T_):
        n = self.latent_noise[0].shape[0]
        out = np.zeros((n, T_, self.policy.D))
        for t, e in enumerate(self.latent_noise):
            out[:, t] = e
        return out


def rollout(policy, days, rng=None, deterministic=False, tag=None):
    """Run the policy on ``days`` in lock step.  Returns (trajectories, latent noise (B, T, D))."""
    actor = policy.actor(rng, deterministic)
    L = np.array([d.roi_target for d in days])

    def fn(step_feats, obs_feats, t):
        return np.exp(actor(step_feats, obs_feats, t)) / L

    trajs = BatchRollout(days, tag or "policy").run(fn)
    T_ = max(d.H for d in days)
    return trajs, actor.noise_array(T_)


# ---------------------------------------------------------------------------
# imitation


@dataclass
class ExpertBatch:
    batch: object  # EpisodeBatch of expert trajectories
    smooth_mean: np.ndarray  # (B, T, D) smoothing beliefs from the world model
    smooth_log_std: np.ndarray


def expert_batch(world_model, expert_trajs):
    b = make_batch(expert_trajs)
    m, s = world_model.infer_latent(b.steps, b.mask, mode="smoothing")
    return ExpertBatch(b, m, s)


def causal_bc_terms(policy, P, eb, noise, beta2):
    """Expert action NLL under the policy plus beta2 * KL(smoothing || filtering)."""
    b = eb.batch
    mask = b.mask.reshape(-1)
    n = max(mask.sum(), 1.0)
    w, q = policy.latent(P, b.steps, b.mask, noise)
    g = policy.action_dist(P, b.obs.reshape(-1, FEATURE_DIM), w)
    nll = (gaussian_nll(b.log_action.reshape(-1, 1), g) * mask).sum() / n
    target = GaussianParams(Tensor(eb.smooth_mean.reshape(-1, policy.D)),
                            Tensor(eb.smooth_log_std.reshape(-1, policy.D)))
    kl = (kl_diag_gaussians(target, q) * mask).sum() / n
    total = nll + kl * beta2 if beta2 else nll
    return {"total": total, "nll": nll, "kl": kl}


def causal_bc_loss(policy, P, eb, noise, beta2=0.1):
    return causal_bc_terms(policy, P, eb, noise, beta2)["total"]
