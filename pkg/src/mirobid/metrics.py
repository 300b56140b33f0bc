"""Competitive ratio, tolerance-aware competitive ratio and report aggregation."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class MetricsConfig:
    gamma: float = 0.02  # largest tolerated relative ROI shortfall
    zeta: float = 0.05  # payoff discount per percentage point of shortfall

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")

    @property
    def cap_points(self):
        return 100.0 * self.gamma


def competitive_ratio(U, U_star):
    if U_star <= 0:
        raise ValueError("U_star must be positive; zero-value days are excluded upstream")
    return U / U_star


def tolerance_level(roi, L, cfg=None):
    """Shortfall of ROI below L in whole percentage points (0 when feasible)."""
    if L <= 0:
        raise ValueError("L must be positive")
    short = max(1.0 - roi / L, 0.0) if math.isfinite(roi) else 0.0
    # round away float noise so that e.g. 1 - 0.99 counts as exactly one point
    return int(math.ceil(round(100.0 * short, 9)))


@dataclass
class DayScore:
    day_id: int
    split: str
    mechanism: str
    U: float
    U_star: float
    cost: float
    L: float
    B: float

    @property
    def roi(self):
        return self.U / self.cost if self.cost > 0 else float("inf")

    @property
    def included(self):
        return self.U_star > 0

    def level(self, cfg):
        return tolerance_level(self.roi, self.L, cfg)

    def tolerated(self, cfg):
        return self.roi >= self.L * (1.0 - cfg.gamma)

    def tacr_term(self, cfg):
        if not self.tolerated(cfg):
            return 0.0
        return self.U / (1.0 + cfg.zeta) ** self.level(cfg) / self.U_star

    def cr_term(self, cfg):
        return self.U / self.U_star if self.tolerated(cfg) else 0.0

    def to_dict(self, cfg):
        d = asdict(self)
        d.update(roi=_num(self.roi), level=self.level(cfg), tacr=self.tacr_term(cfg), cr_at_gamma=self.cr_term(cfg),
                 feasible=bool(self.roi >= self.L and self.cost <= self.B))
        return d


def _num(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def tacr(scores, cfg=None):
    cfg = cfg or MetricsConfig()
    terms = [s.tacr_term(cfg) for s in scores if s.included]
    return float(np.mean(terms)) if terms else None


def cr_at_gamma(scores, cfg=None):
    cfg = cfg or MetricsConfig()
    terms = [s.cr_term(cfg) for s in scores if s.included]
    return float(np.mean(terms)) if terms else None


def score_trajectories(trajs, days, experts):
    """DayScores for policy trajectories on days; ``experts`` maps day_id -> U*."""
    by_id = {d.day_id: d for d in days}
    out = []
    for tr in trajs:
        d = by_id[tr.day_id]
        o = tr.outcome
        out.append(DayScore(int(d.day_id), d.split, d.mechanism, o.utility, float(experts[d.day_id]),
                            o.cost, d.roi_target, d.budget))
    return out


GROUPS = ("all", "GSP", "MIX", "test-iid", "test-ood")


def _group(scores, g):
    if g == "all":
        return scores
    if g in ("GSP", "MIX"):
        return [s for s in scores if s.mechanism == g]
    return [s for s in scores if s.split == g]


@dataclass
class MetricsReport:
    cfg: MetricsConfig
    # per method -> group -> list over runs
    tacr: dict = field(default_factory=dict)
    cr: dict = field(default_factory=dict)

    def summary(self):
        rows = []
        for method in sorted(self.tacr):
            for g in GROUPS:
                t = [x for x in self.tacr[method].get(g, []) if x is not None]
                c = [x for x in self.cr[method].get(g, []) if x is not None]
                if not t:
                    continue
                rows.append({
                    "method": method, "group": g, "runs": len(t),
                    "mTACR": float(np.median(t)), "meanTACR": float(np.mean(t)),
                    "mCR_at_gamma": float(np.median(c)), "meanCR_at_gamma": float(np.mean(c)),
                })
        return rows

    def to_json(self):
        return json.dumps({"gamma": self.cfg.gamma, "zeta": self.cfg.zeta, "summary": self.summary(),
                           "per_run": {"tacr": self.tacr, "cr_at_gamma": self.cr}}, indent=1, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        fields = ["method", "group", "runs", "mTACR", "meanTACR", "mCR_at_gamma", "meanCR_at_gamma"]
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in self.summary():
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def median(self, method, group="all"):
        vals = [x for x in self.tacr.get(method, {}).get(group, []) if x is not None]
        return float(np.median(vals)) if vals else None


def aggregate_report(runs, cfg=None):
    """``runs``: iterable of (method, list[DayScore]); one entry per seed."""
    cfg = cfg or MetricsConfig()
    rep = MetricsReport(cfg)
    for method, scores in runs:
        for g in GROUPS:
            sub = _group(scores, g)
            rep.tacr.setdefault(method, {}).setdefault(g, []).append(tacr(sub, cfg) if sub else None)
            rep.cr.setdefault(method, {}).setdefault(g, []).append(cr_at_gamma(sub, cfg) if sub else None)
    return rep
