"""Comparison policies: feedback control (PID) and cross-entropy search."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .env import run_episode
from .oracle import budget_enforced_totals


@dataclass
class PidState:
    kp: float = 0.2
    ki: float = 0.02
    kd: float = 0.0
    integral_limit: float = 2.0
    log_ratio: float = 0.0  # log of the scale-free action a*L
    integral: float = 0.0
    prev_error: float = 0.0
    # pacing target: linear spend schedule over the horizon
    horizon: int = 24

    def ratio(self, L):
        return math.exp(self.log_ratio) / L

    def to_dict(self):
        return asdict(self)


def pid_error(obs, L):
    """Combined error: ROI error (once anything was spent) and pacing error.

    Positive error means there is room to bid higher.  The more restrictive
    of the two wins.
    """
    e_pace = obs.time_frac - (1.0 - obs.budget_remaining)
    if obs.cum_cost > 0:
        e_roi = (obs.roi - L) / L
        return min(e_roi, e_pace)
    return e_pace


def pid_step(state, error):
    """Advance the controller by one error sample; returns the new log action."""
    state.integral = float(np.clip(state.integral + error, -state.integral_limit, state.integral_limit))
    delta = state.kp * error + state.ki * state.integral + state.kd * (error - state.prev_error)
    state.prev_error = error
    state.log_ratio += delta
    return state.log_ratio


class PidPolicy:
    def __init__(self, kp=0.2, ki=0.02, kd=0.0, integral_limit=2.0):
        self.gains = dict(kp=kp, ki=ki, kd=kd, integral_limit=integral_limit)

    def run(self, day):
        st = PidState(**self.gains, horizon=day.H)
        L = day.roi_target

        def fn(obs, traj):
            if len(traj.actions) > 0:
                pid_step(st, pid_error(obs, L))
            return st.ratio(L)

        return run_episode(day, fn, tag="pid")


# ---------------------------------------------------------------------------
# CEM over a constant scale-free log ratio


@dataclass
class CemState:
    mean: float = 0.0
    std: float = 0.5
    population: int = 32
    elite_frac: float = 0.25
    iteration: int = 0
    std_floor: float = 1e-3
    bound: float = 5.0
    # weight of the elite std in the new std; keeps the search from collapsing early
    std_smoothing: float = 0.5

    def to_dict(self):
        return asdict(self)


def cem_sample(state, rng):
    return state.mean + state.std * rng.standard_normal(state.population)


def cem_iterate(state, samples, scores):
    samples = np.asarray(samples, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if samples.shape != (state.population,) or scores.shape != (state.population,):
        raise ValueError(f"expected {state.population} samples and scores")
    n_elite = max(1, int(round(state.elite_frac * state.population)))
    # stable sort so equal scores keep sample order
    elite = samples[np.argsort(-scores, kind="stable")[:n_elite]]
    state.mean = float(np.clip(elite.mean(), -state.bound, state.bound))
    a = state.std_smoothing
    state.std = float(np.clip(a * elite.std() + (1 - a) * state.std, state.std_floor, state.bound))
    state.iteration += 1
    return state


def day_value(day, log_actions, u_star=None):
    """Score of constant scale-free log actions on a day (0 when ROI fails)."""
    ratios = np.exp(np.asarray(log_actions, dtype=np.float64)) / day.roi_target
    u, c = budget_enforced_totals(day, ratios)
    val = np.where(u >= day.roi_target * c, u, 0.0)
    return val / u_star if u_star else val


class CemPlanner:
    """Re-plans one constant log action per day from the trailing days' replays."""

    def __init__(self, rng, window=5, iterations=5, population=32, elite_frac=0.25, init_std=0.5):
        self.rng = rng
        self.window, self.iterations = window, iterations
        self.population, self.elite_frac, self.init_std = population, elite_frac, init_std
        self.history = []  # (day, U*) already observed
        self.mean = 0.0

    def plan(self):
        if not self.history:
            return self.mean
        st = CemState(mean=self.mean, std=self.init_std, population=self.population, elite_frac=self.elite_frac)
        recent = self.history[-self.window:]
        for _ in range(self.iterations):
            xs = cem_sample(st, self.rng)
            scores = np.mean([day_value(d, xs, us) for d, us in recent], axis=0)
            cem_iterate(st, xs, scores)
        self.mean = st.mean
        return self.mean

    def observe(self, day, u_star):
        self.history.append((day, u_star if u_star > 0 else None))

    def run_sequence(self, days, u_star):
        """Act on each day in order, then learn from it; returns trajectories."""
        from .env import replay_actions

        out = []
        for d in days:
            la = self.plan()
            out.append(replay_actions(d, [math.exp(la) / d.roi_target] * d.H, tag="cem"))
            self.observe(d, u_star[d.day_id])
        return out
