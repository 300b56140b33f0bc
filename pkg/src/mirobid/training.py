"""Method definitions and the end-to-end training / evaluation loops."""

from __future__ import annotations

import pickle
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import CemPlanner, PidPolicy
from .metrics import score_trajectories
from .miro import (
    LearnerConfig,
    TeacherConfig,
    policy_update,
    surrogate_rewards,
    teacher_search,
)
from .oracle import expert_for_day
from .policy import CausalPolicy, PolicyConfig, expert_batch, rollout
from .seeding import sub_rng
from .worldmodel import WorldModel, episode_reward_units, WorldModelConfig, WorldModelTrainer, exploration_rollouts, make_batch


@dataclass(frozen=True)
class MethodSpec:
    use_latent: bool
    teacher: bool
    rl_weight: float
    bc_weight: float
    beta2: float


METHODS = {
    "mirocl": MethodSpec(use_latent=True, teacher=True, rl_weight=1.0, bc_weight=0.5, beta2=0.1),
    "miro-p": MethodSpec(use_latent=True, teacher=True, rl_weight=1.0, bc_weight=0.0, beta2=0.0),
    "miro-d": MethodSpec(use_latent=False, teacher=True, rl_weight=1.0, bc_weight=0.5, beta2=0.0),
    "erm": MethodSpec(use_latent=False, teacher=False, rl_weight=1.0, bc_weight=0.0, beta2=0.0),
    "bc": MethodSpec(use_latent=False, teacher=False, rl_weight=0.0, bc_weight=1.0, beta2=0.0),
}
LEARNED = tuple(METHODS)
ALGOS = LEARNED + ("pid", "cem")


@dataclass
class TrainConfig:
    iters: int = 200
    refresh_every: int = 10
    bc_weight: float | None = None  # overrides the method default when set
    beta2: float | None = None
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------


class Workspace:
    """Everything shared by all methods of one seed: data, experts, world model."""

    def __init__(self, days, seed=0, experts=None, wm_cfg=None):
        self.days = list(days)
        self.seed = seed
        self.train_days = [d for d in self.days if d.split == "train"]
        self.test_days = [d for d in self.days if d.split != "train"]
        self.experts = experts or {d.day_id: expert_for_day(d) for d in self.days}
        self.u_star = {k: rec.utility for k, (rec, _) in self.experts.items()}
        self.wm_cfg = wm_cfg or WorldModelConfig()
        self._wm = None
        self._trainer = None

    def expert_trajs(self, days):
        return [self.experts[d.day_id][1] for d in days]

    @property
    def world_model(self):
        if self._wm is None:
            self._wm, self._trainer = self._train_world_model()
        return self._wm

    @property
    def wm_trainer(self):
        self.world_model
        return self._trainer

    def _train_world_model(self):
        wm = WorldModel(self.wm_cfg, self.seed)
        tr = self._trainer_for(wm, fit_scaler=True)
        tr.train(self.wm_cfg.steps)
        return wm, tr

    def _trainer_for(self, wm, fit_scaler):
        c = self.wm_cfg
        rng = sub_rng(self.seed, "world-model", "explore")
        extra = []
        for d in self.train_days:
            extra += exploration_rollouts(d, self.experts[d.day_id][1].actions, c.explore_per_day, rng,
                                          c.explore_day_sd, c.explore_step_sd)
        return WorldModelTrainer(wm, self.expert_trajs(self.train_days), extra, self.seed, fit_scaler=fit_scaler)

    def attach_world_model(self, wm):
        """Use an already trained world model (e.g. loaded from a checkpoint)."""
        self._wm, self._trainer = wm, self._trainer_for(wm, fit_scaler=False)


def method_spec(method, cfg):
    spec = METHODS[method]
    if cfg.bc_weight is not None or cfg.beta2 is not None:
        spec = MethodSpec(spec.use_latent, spec.teacher, spec.rl_weight,
                          spec.bc_weight if cfg.bc_weight is None else cfg.bc_weight,
                          spec.beta2 if cfg.beta2 is None else cfg.beta2)
    return spec


class PolicyTrainer:
    """Alternating teacher / learner loop for one learned method.

    All state (parameters, optimizer moments, random streams, world-model
    pool) lives on the instance, so a pickled trainer resumes bit-exactly.
    """

    def __init__(self, method, ws, seed, cfg=None):
        self.cfg = cfg = cfg or TrainConfig()
        self.method, self.seed = method, seed
        self.spec = spec = method_spec(method, cfg)
        self.wm = wm = ws.world_model.copy()
        base = ws.wm_trainer
        self.trainer = WorldModelTrainer(wm, base.expert.values(), base.pool[len(base.expert):], seed,
                                         fit_scaler=False)
        self.trainer.rng = sub_rng(seed, method, "refresh")
        pcfg = PolicyConfig(**{**asdict(cfg.policy), "use_latent": spec.use_latent})
        self.policy = CausalPolicy(pcfg, seed)
        self.policy.load_encoder(wm)
        self.train_days = ws.train_days
        self.expert_by_day = {d.day_id: ws.experts[d.day_id][1] for d in ws.train_days}
        self.latents = self.trainer.latents()
        self.eb = expert_batch(wm, [self.expert_by_day[d.day_id] for d in self.train_days])
        self.H = max(d.H for d in self.train_days)
        self.rng_days = sub_rng(seed, method, "days")
        self.rng_roll = sub_rng(seed, method, "rollout")
        self.rng_bc = sub_rng(seed, method, "bc-noise")
        self.it = 0
        self.stream = []

    @property
    def done(self):
        return self.it >= self.cfg.iters

    def step(self):
        cfg, spec, policy, wm = self.cfg, self.spec, self.policy, self.wm
        it = self.it
        rec = {"iter": it, "method": self.method}
        n = min(cfg.teacher.n, len(self.train_days))
        idx = np.sort(self.rng_days.choice(len(self.train_days), size=n, replace=False))
        batch_days = [self.train_days[i] for i in idx]
        pb = noise = rewards = None
        if spec.rl_weight:
            trajs, noise = rollout(policy, batch_days, self.rng_roll)
            pb = make_batch(trajs, self.H)
            omega_ref = np.stack([self.latents[d.day_id] for d in batch_days])
            omega = omega_ref
            if spec.teacher:
                exp_b = make_batch([self.expert_by_day[d.day_id] for d in batch_days], self.H)
                pairs = teacher_search(wm, exp_b, pb, omega_ref, cfg.teacher)
                omega = np.stack([p.omega for p in pairs])
                rec["regret_ref"] = float(np.mean([p.regret_ref for p in pairs]))
                rec["regret"] = float(np.mean([p.regret for p in pairs]))
            rewards = surrogate_rewards(wm, pb, omega)
            rec["true_return"] = float(np.mean([episode_reward_units(t) for t in trajs]))
        bc_noise = self.rng_bc.standard_normal((self.eb.batch.B, self.eb.batch.T, policy.D))
        diag = policy_update(policy, pb, noise, rewards, self.eb, bc_noise, cfg.learner, rl_weight=spec.rl_weight,
                             bc_weight=spec.bc_weight, beta2=spec.beta2, lr=cfg.learner.lr_at(it, cfg.iters))
        rec.update(diag)
        if spec.rl_weight and cfg.refresh_every and (it + 1) % cfg.refresh_every == 0:
            self.trainer.add(trajs)
            self.trainer.train(cfg.world_model.refresh_steps, vib=False)
        self.stream.append(rec)
        self.it += 1
        return rec

    def run(self, until=None, callback=None):
        until = self.cfg.iters if until is None else min(until, self.cfg.iters)
        while self.it < until:
            rec = self.step()
            if callback:
                callback(rec)
        return self

    def save_state(self, path):
        with open(path, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)

    @staticmethod
    def load_state(path):
        with open(path, "rb") as fh:
            out = pickle.load(fh)
        if not isinstance(out, PolicyTrainer):
            raise TypeError(f"{path} does not hold a trainer state")
        return out


def train_policy(method, ws, seed, cfg=None, callback=None):
    """Train one learned method; returns (policy, world model copy, metrics stream)."""
    t = PolicyTrainer(method, ws, seed, cfg).run(callback=callback)
    return t.policy, t.wm, t.stream


def evaluate_policy(policy, days, u_star):
    trajs, _ = rollout(policy, days, deterministic=True, tag="eval")
    return trajs, score_trajectories(trajs, days, u_star)


def run_baseline(algo, ws, seed, days=None, pid=None, cem=None):
    """Trajectories and scores of a non-learned method; ``pid``/``cem`` are keyword dicts."""
    days = days or ws.test_days
    if algo == "pid":
        pol = PidPolicy(**(pid or {}))
        trajs = [pol.run(d) for d in days]
    elif algo == "cem":
        # plans through the whole calendar so the test days see trailing history
        planner = CemPlanner(sub_rng(seed, "cem"), **(cem or {}))
        all_trajs = planner.run_sequence(sorted(ws.days, key=lambda d: d.day_id), ws.u_star)
        keep = {d.day_id for d in days}
        trajs = [t for t in all_trajs if t.day_id in keep]
    else:
        raise ValueError(f"not a baseline: {algo}")
    return trajs, score_trajectories(trajs, days, ws.u_star)
