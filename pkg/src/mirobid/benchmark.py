"""Seeded benchmark runs: one dataset and world model per seed, every method on top."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .market import GeneratorConfig, generate_dataset
from .metrics import aggregate_report
from .training import LEARNED, TrainConfig, Workspace, evaluate_policy, run_baseline, train_policy


def build_workspace(gen_cfg, seed, wm_cfg=None):
    days = generate_dataset(replace(gen_cfg, seed=seed))
    ws = Workspace(days, seed, wm_cfg=wm_cfg)
    ws.world_model  # train eagerly so timings are attributed here
    return ws


@dataclass
class BenchmarkRun:
    scores: dict = field(default_factory=dict)  # (method, seed) -> list[DayScore]
    policies: dict = field(default_factory=dict)  # (method, seed) -> trained policy
    world_models: dict = field(default_factory=dict)  # (method, seed) -> world model after training
    workspaces: dict = field(default_factory=dict)  # seed -> Workspace
    seconds: dict = field(default_factory=dict)
    total_seconds: float = 0.0

    def report(self, cfg=None):
        keys = sorted(self.scores)
        return aggregate_report([(m, self.scores[(m, s)]) for m, s in keys], cfg)


def run_benchmark(seeds, methods, gen_cfg=None, train_cfg=None, keep=(), log=None):
    """Train and evaluate ``methods`` on ``seeds``; policies for ``keep`` methods are retained."""
    gen_cfg = gen_cfg or GeneratorConfig()
    train_cfg = train_cfg or TrainConfig()
    out = BenchmarkRun()
    for seed in seeds:
        t0 = time.perf_counter()
        ws = build_workspace(gen_cfg, seed, train_cfg.world_model)
        out.workspaces[seed] = ws
        out.seconds[("setup", seed)] = time.perf_counter() - t0
        for m in methods:
            t0 = time.perf_counter()
            if m in LEARNED:
                policy, wm, _ = train_policy(m, ws, seed, train_cfg)
                _, scores = evaluate_policy(policy, ws.test_days, ws.u_star)
                if m in keep:
                    out.policies[(m, seed)] = policy
                    out.world_models[(m, seed)] = wm
            else:
                _, scores = run_baseline(m, ws, seed)
            out.scores[(m, seed)] = scores
            out.seconds[(m, seed)] = time.perf_counter() - t0
            if log:
                log(f"seed {seed} {m}: {np.round(time.perf_counter() - t0, 1)}s")
    return out
