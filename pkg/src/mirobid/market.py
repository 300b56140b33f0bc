"""Synthetic auction days and second-price / mixed second-first-price pricing.

A day is stored column-wise (numpy arrays over its auctions) so that slot
replays vectorize; :class:`AuctionRecord` is the per-auction view.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from .seeding import day_rng


class PricingKind(str, Enum):
    SECOND_PRICE = "second_price"
    MIXED = "mixed"


@dataclass(frozen=True)
class AuctionRecord:
    utility_estimate: float
    realized_utility: float
    market_price: float
    index: int = 0

    def __post_init__(self):
        if not self.market_price > 0:
            raise ValueError("market_price must be positive")
        if self.utility_estimate < 0 or self.realized_utility < 0:
            raise ValueError("utilities must be nonnegative")


@dataclass
class PricingRule:
    kind: PricingKind = PricingKind.SECOND_PRICE
    mix_schedule: np.ndarray | None = None

    def __post_init__(self):
        self.kind = PricingKind(self.kind)
        if self.kind is PricingKind.MIXED:
            if self.mix_schedule is None:
                raise ValueError("mixed pricing needs a per-slot k schedule")
            self.mix_schedule = np.asarray(self.mix_schedule, dtype=np.float64)
            if np.any(self.mix_schedule < 0) or np.any(self.mix_schedule > 1):
                raise ValueError("every k must lie in [0, 1]")

    def k(self, slot):
        if self.kind is PricingKind.SECOND_PRICE:
            return 0.0
        return float(self.mix_schedule[slot])

    def k_array(self, n_slots):
        if self.kind is PricingKind.SECOND_PRICE:
            return np.zeros(n_slots)
        return np.asarray(self.mix_schedule, dtype=np.float64)


@dataclass(frozen=True)
class WinOutcome:
    won: bool
    cost: float


@dataclass(frozen=True)
class SlotResult:
    utility_sum: float
    cost_sum: float
    win_count: int


def charge(bids, market_prices, k):
    """Cost of winning at ``bids``: k*bid + (1-k)*market price."""
    return k * bids + (1.0 - k) * market_prices


def price_auction(bid, auction, rule, slot=0):
    if bid < 0:
        raise ValueError("bid must be nonnegative")
    if not bid > auction.market_price:
        return WinOutcome(False, 0.0)
    return WinOutcome(True, float(charge(bid, auction.market_price, rule.k(slot))))


@dataclass
class EnvironmentDay:
    utility_estimate: np.ndarray
    realized_utility: np.ndarray
    market_price: np.ndarray
    pricing: PricingRule
    budget: float
    roi_target: float
    slot_boundaries: np.ndarray
    day_id: int = 0
    split: str = "train"
    mechanism: str = "GSP"

    def __post_init__(self):
        self.utility_estimate = np.asarray(self.utility_estimate, dtype=np.float64)
        self.realized_utility = np.asarray(self.realized_utility, dtype=np.float64)
        self.market_price = np.asarray(self.market_price, dtype=np.float64)
        self.slot_boundaries = np.asarray(self.slot_boundaries, dtype=np.int64)
        n = self.utility_estimate.size
        if not (self.realized_utility.size == n == self.market_price.size):
            raise ValueError("auction columns must have equal length")
        if np.any(self.market_price <= 0):
            raise ValueError("market prices must be positive")
        if np.any(self.utility_estimate < 0) or np.any(self.realized_utility < 0):
            raise ValueError("utilities must be nonnegative")
        b = self.slot_boundaries
        if b[0] != 0 or b[-1] != n or np.any(np.diff(b) <= 0):
            raise ValueError("slot boundaries must be strictly increasing and cover all auctions")
        if not self.budget > 0 or not self.roi_target > 0:
            raise ValueError("budget and ROI target must be positive")

    @property
    def H(self):
        return len(self.slot_boundaries) - 1

    @property
    def n_auctions(self):
        return self.utility_estimate.size

    @property
    def k_schedule(self):
        return self.pricing.k_array(self.H)

    def slot(self, t):
        if not 0 <= t < self.H:
            raise IndexError(f"slot {t} outside [0, {self.H})")
        return slice(int(self.slot_boundaries[t]), int(self.slot_boundaries[t + 1]))

    def auction(self, i):
        return AuctionRecord(float(self.utility_estimate[i]), float(self.realized_utility[i]),
                             float(self.market_price[i]), i)

    def header(self):
        return {
            "day_id": int(self.day_id),
            "budget": float(self.budget),
            "roi_target": float(self.roi_target),
            "H": int(self.H),
            "split": self.split,
            "mechanism": self.mechanism,
            "pricing": self.pricing.kind.value,
            "k_schedule": [float(k) for k in self.k_schedule],
            "slot_boundaries": [int(b) for b in self.slot_boundaries],
            "n_auctions": int(self.n_auctions),
        }

    def digest(self):
        h = hashlib.sha256(json.dumps(self.header(), sort_keys=True).encode())
        for arr in (self.utility_estimate, self.realized_utility, self.market_price):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def replay_slot_aggregate(day, slot, ratio):
    """Replay a slot with bids ratio*utility_estimate, no budget accounting."""
    if ratio < 0:
        raise ValueError("ratio must be nonnegative")
    sl = day.slot(slot)
    bids = ratio * day.utility_estimate[sl]
    m = day.market_price[sl]
    won = bids > m
    cost = charge(bids[won], m[won], day.pricing.k(slot))
    return SlotResult(float(day.realized_utility[sl][won].sum()), float(cost.sum()), int(won.sum()))


def replay_constant(day, ratios, pricing=None):
    """Day totals (utility, cost) for each constant ratio, no budget accounting."""
    ratios = np.atleast_1d(np.asarray(ratios, dtype=np.float64))
    pricing = pricing or day.pricing
    k = np.repeat(pricing.k_array(day.H), np.diff(day.slot_boundaries))
    bids = ratios[:, None] * day.utility_estimate[None, :]
    won = bids > day.market_price[None, :]
    cost = np.where(won, charge(bids, day.market_price[None, :], k[None, :]), 0.0)
    util = np.where(won, day.realized_utility[None, :], 0.0)
    return util.sum(1), cost.sum(1)


@dataclass
class GeneratorConfig:
    days: int = 40
    auctions_per_day: int = 20_000
    H: int = 24
    # competition (market price) and value intensities over the day
    competition_amplitude: float = 0.35
    competition_period: float = 24.0
    competition_phase: float = 0.0
    value_amplitude: float = 0.25
    value_period: float = 24.0
    value_phase: float = 1.5
    phase_jitter: float = 1.0
    amplitude_jitter: float = 0.3
    day_level_sd: float = 0.1
    # log-normal marginals
    price_loc: float = 0.0
    price_scale: float = 0.5
    value_loc: float = 0.0
    value_scale: float = 0.5
    value_price_corr: float = 0.5
    click_prob: float = 0.9
    # mixed-auction k schedule
    inflection_count: int = 3
    k_low: float = 0.05
    k_high: float = 0.95
    k_endpoints: tuple | None = None
    # which days are mixed; the rest are second price
    train_gsp: int = 7
    train_mix: int = 13
    test_gsp: int = 8
    test_mix: int = 12
    # constant k per mixed day instead of a schedule (two-regime sets)
    fixed_k: tuple | None = None
    # B and L calibration
    roi_percentile: float = 60.0
    budget_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if min(self.days, self.auctions_per_day, self.H) <= 0:
            raise ValueError("days, auctions_per_day and H must be positive")
        if self.auctions_per_day < self.H:
            raise ValueError("need at least one auction per slot")
        if self.competition_amplitude < 0 or self.value_amplitude < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.price_scale <= 0 or self.value_scale <= 0:
            raise ValueError("log-scale spreads must be positive")
        if not 0 < self.click_prob <= 1:
            raise ValueError("click_prob must be in (0, 1]")
        if not -1 < self.value_price_corr < 1:
            raise ValueError("value_price_corr must be in (-1, 1)")
        if not 0 <= self.k_low <= self.k_high <= 1:
            raise ValueError("k range must lie within [0, 1]")
        if self.inflection_count < 0:
            raise ValueError("inflection_count must be nonnegative")
        if self.train_gsp + self.train_mix + self.test_gsp + self.test_mix != self.days:
            raise ValueError("split counts must add up to days")
        if not 0 < self.budget_fraction:
            raise ValueError("budget_fraction must be positive")

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("k_endpoints", "fixed_k"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("k_endpoints", "fixed_k"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def day_layout(cfg):
    """(split, mechanism) per day index, in day order."""
    layout = ([("train", "GSP")] * cfg.train_gsp + [("train", "MIX")] * cfg.train_mix
              + [("test-iid", "GSP")] * cfg.test_gsp + [("test-ood", "MIX")] * cfg.test_mix)
    return layout


def k_schedule(rng, cfg):
    """Piecewise-linear k through sampled inflection points, constant within a slot."""
    if cfg.k_endpoints is not None:
        ends = np.asarray(cfg.k_endpoints, dtype=np.float64)
    else:
        ends = rng.uniform(cfg.k_low, cfg.k_high, size=2)
    xs = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, size=cfg.inflection_count)), [1.0]])
    ys = np.concatenate([[ends[0]], rng.uniform(cfg.k_low, cfg.k_high, size=cfg.inflection_count), [ends[1]]])
    centers = (np.arange(cfg.H) + 0.5) / cfg.H
    return np.clip(np.interp(centers, xs, ys), 0.0, 1.0)


def _intensity(amplitude, period, phase, slots):
    return amplitude * np.sin(2 * np.pi * (slots + 0.5) / period + phase)


def calibrate(u_est, u_real, m, roi_percentile, budget_fraction):
    """ROI target and budget for a day, from second-price replay.

    L is the given percentile of per-auction value/price ratios.  The greedy
    spend is the spend of the largest constant ratio that still meets L under
    second price; B is ``budget_fraction`` of it.
    """
    L = float(np.percentile(u_est / m, roi_percentile))
    order = np.argsort(m / np.maximum(u_est, 1e-300))
    cu, cc = np.cumsum(u_real[order]), np.cumsum(m[order])
    feasible = np.nonzero(cu >= L * cc)[0]
    greedy_spend = float(cc[feasible[-1]]) if feasible.size else float(cc[0])
    return L, budget_fraction * greedy_spend


def generate_day(cfg, index, split="train", mechanism="GSP", fixed_k=None):
    rng = day_rng(cfg.seed, index)
    n, H = cfg.auctions_per_day, cfg.H
    bounds = np.round(np.linspace(0, n, H + 1)).astype(np.int64)
    slot_of = np.repeat(np.arange(H), np.diff(bounds))

    amp_c = cfg.competition_amplitude * (1 + cfg.amplitude_jitter * rng.uniform(-1, 1))
    amp_v = cfg.value_amplitude * (1 + cfg.amplitude_jitter * rng.uniform(-1, 1))
    ph_c = cfg.competition_phase + cfg.phase_jitter * rng.uniform(-1, 1)
    ph_v = cfg.value_phase + cfg.phase_jitter * rng.uniform(-1, 1)
    slots = np.arange(H)
    comp = _intensity(amp_c, cfg.competition_period, ph_c, slots)
    val = _intensity(amp_v, cfg.value_period, ph_v, slots)
    level = cfg.day_level_sd * rng.standard_normal()

    z1 = rng.standard_normal(n)
    z2 = cfg.value_price_corr * z1 + np.sqrt(1 - cfg.value_price_corr**2) * rng.standard_normal(n)
    m = np.exp(cfg.price_loc + level + comp[slot_of] + cfg.price_scale * z1)
    u_est = np.exp(cfg.value_loc + val[slot_of] + cfg.value_scale * z2)
    clicks = rng.random(n) < cfg.click_prob
    u_real = np.where(clicks, u_est / cfg.click_prob, 0.0)

    if mechanism == "GSP":
        pricing = PricingRule(PricingKind.SECOND_PRICE)
    elif fixed_k is not None:
        pricing = PricingRule(PricingKind.MIXED, np.full(H, float(fixed_k)))
    else:
        pricing = PricingRule(PricingKind.MIXED, k_schedule(rng, cfg))
    L, B = calibrate(u_est, u_real, m, cfg.roi_percentile, cfg.budget_fraction)
    return EnvironmentDay(u_est, u_real, m, pricing, B, L, bounds, index, split, mechanism)


def generate_dataset(cfg):
    """All days of ``cfg``; a pure function of the config (per-day seeds split from ``cfg.seed``)."""
    out = []
    mix_i = 0
    for i, (split, mech) in enumerate(day_layout(cfg)):
        fk = None
        if mech == "MIX" and cfg.fixed_k is not None:
            fk = cfg.fixed_k[mix_i % len(cfg.fixed_k)]
            mix_i += 1
        out.append(generate_day(cfg, i, split, mech, fk))
    return out


def two_regime_config(days=40, auctions_per_day=4000, H=12, k_pair=(0.0, 0.9), seed=0, **kw):
    """Mixed days with constant k alternating between two regimes, half train half test.

    ``k = 0`` days are mixed-rule days that price exactly like second price.
    """
    half = days // 2
    return GeneratorConfig(days=days, auctions_per_day=auctions_per_day, H=H,
                           train_gsp=0, train_mix=half, test_gsp=0, test_mix=days - half,
                           fixed_k=tuple(k_pair), seed=seed, **kw)


def dataset_digest(days):
    h = hashlib.sha256()
    for d in days:
        h.update(d.digest().encode())
    return h.hexdigest()


@dataclass
class DaySplit:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)


def split_days(days):
    out = DaySplit()
    for d in days:
        (out.train if d.split == "train" else out.test).append(d)
    return out
