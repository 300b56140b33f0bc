"""Regret-driven training: teacher search over environment latents and the
policy-gradient learner that trains against them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diffcore import (
    adaptive_update,
    clip_by_global_norm,
    forward_backward,
    no_grad,
)
from .diffcore.optim import add_grads
from .diffcore.tensor import Tensor
from .env import FEATURE_DIM
from .policy import causal_bc_terms
from .worldmodel import make_batch


@dataclass
class TeacherConfig:
    eta: float = 0.05
    lam: float = 1.0
    steps: int = 10
    n: int = 16
    eps: float = 1e-3
    alpha: float = 0.0  # entropy temperature; recorded only
    max_halvings: int = 5

    def __post_init__(self):
        if self.eta < 0 or self.lam < 0 or self.eps <= 0:
            raise ValueError("need eta >= 0, lam >= 0, eps > 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class LearnerConfig:
    lr: float = 1e-3
    entropy: float = 1e-3
    value_weight: float = 0.5
    clip: float = 1.0
    normalize_advantage: bool = True
    lr_decay: str = "linear"  # "linear" anneals to 0 over the run, "constant" keeps lr

    def lr_at(self, it, iters):
        if self.lr_decay == "constant" or not iters:
            return self.lr
        if self.lr_decay != "linear":
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        return self.lr * (1.0 - it / iters)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# regret


@dataclass
class RegretEstimate:
    expert_return: np.ndarray
    policy_return: np.ndarray

    @property
    def regret(self):
        return self.expert_return - self.policy_return


def _returns(wm, P, batch, omega):
    r = wm.reward_per_step(P, batch.obs, batch.log_action, omega)
    return (r * Tensor(batch.mask)).sum(axis=1)


def regret_tensor(wm, P, expert_b, policy_b, omega):
    """Per-pair surrogate regret (B,) as a tensor, differentiable in ``omega``."""
    return _returns(wm, P, expert_b, omega) - _returns(wm, P, policy_b, omega)


def surrogate_regret(wm, expert_b, policy_b, omega):
    P = wm.params.constants()
    with no_grad():
        e = _returns(wm, P, expert_b, omega).data
        p = _returns(wm, P, policy_b, omega).data
    return RegretEstimate(e, p)


def regret_gradient(wm, expert_b, policy_b, omega):
    """Regret per pair and d(sum of regrets)/d omega (pairs do not interact)."""
    P = wm.params.constants()
    om = Tensor(np.asarray(omega, dtype=np.float64), requires_grad=True)
    reg = regret_tensor(wm, P, expert_b, policy_b, om)
    reg.sum().backward()
    return reg.data.copy(), om.grad if om.grad is not None else np.zeros_like(om.data)


# ---------------------------------------------------------------------------
# teacher


@dataclass
class AdversarialPair:
    day_id: int
    omega_ref: np.ndarray
    omega: np.ndarray
    trace: list = field(default_factory=list)  # penalized objective after each accepted step
    regret_ref: float = 0.0
    regret: float = 0.0


def penalized(reg, omega, omega_ref, cfg):
    d2 = ((omega - omega_ref) ** 2).reshape(len(reg), -1).sum(1)
    return reg - cfg.lam * np.sqrt(d2 + cfg.eps**2)


def teacher_search(wm, expert_b, policy_b, omega_ref, cfg):
    """Greedy ascent of regret minus a smoothed distance penalty, per pair.

    A candidate step that lowers a pair's penalized objective is rejected and
    that pair's step size halved (at most ``max_halvings`` times per step).
    """
    omega_ref = np.asarray(omega_ref, dtype=np.float64)
    omega = omega_ref.copy()
    reg, _ = regret_gradient(wm, expert_b, policy_b, omega)
    obj = penalized(reg, omega, omega_ref, cfg)
    n = len(reg)
    traces = [[float(o)] for o in obj]
    reg_ref = reg.copy()
    if cfg.steps > 0 and cfg.eta > 0:
        for _ in range(cfg.steps):
            reg, g_reg = regret_gradient(wm, expert_b, policy_b, omega)
            diff = (omega - omega_ref).reshape(n, -1)
            norm = np.sqrt((diff**2).sum(1) + cfg.eps**2)
            g_pen = (diff / norm[:, None]).reshape(omega.shape)
            grad = g_reg - cfg.lam * g_pen
            eta = np.full(n, cfg.eta)
            active = np.ones(n, dtype=bool)
            new = omega.copy()
            for _h in range(cfg.max_halvings + 1):
                cand = omega + eta.reshape((n,) + (1,) * (omega.ndim - 1)) * grad
                c_reg = surrogate_regret(wm, expert_b, policy_b, cand).regret
                c_obj = penalized(c_reg, cand, omega_ref, cfg)
                ok = active & (c_obj >= obj)
                new[ok] = cand[ok]
                obj = np.where(ok, c_obj, obj)
                for i in np.nonzero(ok)[0]:
                    traces[i].append(float(c_obj[i]))
                active &= ~ok
                if not active.any():
                    break
                eta = np.where(active, eta * 0.5, eta)
            omega = new
    final = surrogate_regret(wm, expert_b, policy_b, omega).regret
    return [AdversarialPair(int(expert_b.day_ids[i]), omega_ref[i], omega[i], traces[i],
                            float(reg_ref[i]), float(final[i])) for i in range(n)]


# ---------------------------------------------------------------------------
# learner


def returns_to_go(rewards, mask):
    r = rewards * mask
    return np.flip(np.cumsum(np.flip(r, axis=1), axis=1), axis=1) * mask


def rl_terms(policy, P, batch, latent_noise, rewards, cfg):
    """Likelihood-ratio objective with a learned baseline and entropy bonus."""
    mask = batch.mask.reshape(-1)
    n = max(mask.sum(), 1.0)
    G = returns_to_go(rewards, batch.mask).reshape(-1)
    logp, w = policy.log_prob(P, batch, latent_noise)
    v = policy.value_of(P, batch.obs.reshape(-1, FEATURE_DIM), w)
    adv = G - v.data
    if cfg.normalize_advantage:
        sd = adv[mask > 0].std() if mask.sum() > 1 else 0.0
        adv = (adv - adv[mask > 0].mean()) / sd if sd > 1e-8 else np.zeros_like(adv)
    pg = -(logp * Tensor(adv * mask)).sum() / n
    ent = P["pi.log_std"].sum()  # Gaussian entropy up to a constant
    vl = ((v - Tensor(G)) ** 2 * Tensor(mask)).sum() / n
    total = pg - ent * cfg.entropy + vl * cfg.value_weight
    return {"total": total, "pg": pg, "value": vl}


def learner_grads(policy, batch, latent_noise, rewards, cfg):
    out = {}

    def fn(P, X):
        terms = rl_terms(policy, P, batch, latent_noise, rewards, cfg)
        out.update({k: float(v.data) for k, v in terms.items()})
        return terms["total"]

    _, g = forward_backward(fn, {}, policy.params)
    return g, out


def bc_grads(policy, eb, noise, beta2):
    out = {}

    def fn(P, X):
        terms = causal_bc_terms(policy, P, eb, noise, beta2)
        out.update({k: float(v.data) for k, v in terms.items()})
        return terms["total"]

    _, g = forward_backward(fn, {}, policy.params)
    return g, out


def apply_update(policy, grads, lr, clip):
    grads, norm = clip_by_global_norm(grads, clip)
    adaptive_update(policy.params, grads, lr)
    return norm


def learner_update(policy, batch, latent_noise, rewards, cfg, lr=None):
    """One policy-gradient step on given per-step rewards (B, T)."""
    g, diag = learner_grads(policy, batch, latent_noise, rewards, cfg)
    diag["grad_norm"] = apply_update(policy, g, cfg.lr if lr is None else lr, cfg.clip)
    return diag


def policy_update(policy, batch, latent_noise, rewards, eb, bc_noise, cfg, rl_weight=1.0, bc_weight=0.5,
                  beta2=0.1, lr=None):
    """Weighted RL + imitation step (single gradient step)."""
    grads, diag = {}, {}
    if rl_weight:
        g, d = learner_grads(policy, batch, latent_noise, rewards, cfg)
        grads = add_grads(grads, g, rl_weight)
        diag.update({f"rl_{k}": v for k, v in d.items()})
    if bc_weight:
        g, d = bc_grads(policy, eb, bc_noise, beta2)
        grads = add_grads(grads, g, bc_weight)
        diag.update({f"bc_{k}": v for k, v in d.items()})
    diag["grad_norm"] = apply_update(policy, grads, cfg.lr if lr is None else lr, cfg.clip)
    return diag


def surrogate_rewards(wm, batch, omega):
    with no_grad():
        r = wm.reward_per_step(wm.params.constants(), batch.obs, batch.log_action, omega).data
    return r * batch.mask


def policy_batch(trajs, horizon):
    return make_batch(trajs, horizon)
