"""Hindsight-optimal slot ratio sequences.

Each slot gets one ratio from a finite grid.  Per-slot (utility, cost) totals
for every grid point are tabulated once; the day problem then becomes

    maximize  sum_t U[t, k_t]
    s.t.      sum_t C[t, k_t] <= B
              sum_t U[t, k_t] >= L * sum_t C[t, k_t]

solved exactly by enumeration for small instances and by an assignment LP
with rounding and local search otherwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .env import replay_actions
from .market import charge

BRUTE_LIMIT = 10**7
REPLAY_TOLERANCE = 0.005


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class RatioGrid:
    ratios: np.ndarray  # ratios[0] == 0 is the abstain sentinel

    def __post_init__(self):
        r = np.asarray(self.ratios, dtype=np.float64)
        if r[0] != 0 or np.any(r[1:] <= 0) or np.any(np.diff(r[1:]) <= 0):
            raise ValueError("grid must be [0, strictly increasing positive ratios]")
        object.__setattr__(self, "ratios", r)

    def __len__(self):
        return len(self.ratios)

    @classmethod
    def log_spaced(cls, a_min, a_max, K):
        return cls(np.concatenate([[0.0], np.geomspace(a_min, a_max, K)]))

    @classmethod
    def from_points(cls, points):
        pts = np.unique(np.asarray(points, dtype=np.float64))
        return cls(np.concatenate([[0.0], pts[pts > 0]]))


def day_grid(day, K=32, percentile=99.0):
    """Log grid with a_max at the given percentile of m/u over the day, a_min = a_max/100."""
    u = day.utility_estimate
    pos = u > 0
    a_max = float(np.percentile(day.market_price[pos] / u[pos], percentile))
    return RatioGrid.log_spaced(a_max / 100.0, a_max, K)


@dataclass
class SlotAggregateTable:
    U: np.ndarray  # (H, K+1)
    C: np.ndarray
    grid: RatioGrid

    @property
    def H(self):
        return self.U.shape[0]

    @property
    def K(self):
        return self.U.shape[1]


def build_slot_aggregates(day, grid):
    r = grid.ratios
    U = np.zeros((day.H, len(r)))
    C = np.zeros((day.H, len(r)))
    for t in range(day.H):
        sl = day.slot(t)
        bids = r[:, None] * day.utility_estimate[None, sl]
        m = day.market_price[sl][None, :]
        won = bids > m
        U[t] = np.where(won, day.realized_utility[None, sl], 0.0).sum(1)
        C[t] = np.where(won, charge(bids, m, day.pricing.k(t)), 0.0).sum(1)
    return SlotAggregateTable(U, C, grid)


@dataclass
class ExpertSolution:
    choice: np.ndarray  # grid index per slot
    ratios: np.ndarray
    utility: float
    cost: float
    bound: float
    method: str
    converged: bool = True

    @property
    def roi(self):
        return self.utility / self.cost if self.cost > 0 else float("inf")

    @property
    def gap(self):
        return self.bound - self.utility


def _feasible(u, c, B, L):
    return (c <= B) & (u >= L * c)


def _evaluate(table, choice):
    idx = np.arange(table.H)
    # summed slot by slot in slot order so every solver agrees bitwise
    u = c = 0.0
    for t in idx:
        u += table.U[t, choice[t]]
        c += table.C[t, choice[t]]
    return u, c


def _solution(table, choice, bound, method, converged=True):
    choice = np.asarray(choice, dtype=int)
    u, c = _evaluate(table, choice)
    return ExpertSolution(choice, table.grid.ratios[choice], float(u), float(c), float(bound), method, converged)


def solve_bruteforce(table, B, L):
    H, K = table.U.shape
    if K**H > BRUTE_LIMIT:
        raise InstanceTooLarge(f"{K}^{H} sequences exceed {BRUTE_LIMIT}; use solve_relaxed")
    u = np.zeros(1)
    c = np.zeros(1)
    for t in range(H):
        u = (u[:, None] + table.U[t][None, :]).ravel()
        c = (c[:, None] + table.C[t][None, :]).ravel()
    ok = _feasible(u, c, B, L)
    # flat C-order index == lexicographic order of the choice sequence
    cand = np.nonzero(ok)[0]
    best_u = u[cand].max()
    cand = cand[u[cand] == best_u]
    cand = cand[c[cand] == c[cand].min()]
    choice = np.unravel_index(cand[0], (K,) * H)
    return _solution(table, np.array(choice), best_u, "bruteforce")


def _lp(table, B, L):
    H, K = table.U.shape
    n = H * K
    Uf, Cf = table.U.ravel(), table.C.ravel()
    A_eq = np.kron(np.eye(H), np.ones((1, K)))
    A_ub = np.vstack([Cf, -(Uf - L * Cf)])
    res = linprog(-Uf, A_ub=A_ub, b_ub=[B, 0.0], A_eq=A_eq, b_eq=np.ones(H),
                  bounds=[(0, 1)] * n, method="highs-ds")
    return res


def _local_search(table, choice, B, L, max_passes=200):
    """Best-improvement 1-opt, then 2-opt, moves until utility stops rising."""
    H, K = table.U.shape
    choice = choice.copy()
    u, c = _evaluate(table, choice)
    for _ in range(max_passes):
        tol = 1e-9 * max(1.0, abs(u))
        move = None
        rows = np.arange(H)
        nu = u - table.U[rows, choice][:, None] + table.U
        nc = c - table.C[rows, choice][:, None] + table.C
        score = np.where(_feasible(nu, nc, B, L), nu, -np.inf)
        j = int(np.argmax(score))
        if score.flat[j] > u + tol:
            move = ((j // K, j % K),)
        elif H > 1:
            ts, ss = np.triu_indices(H, 1)
            base_u = u - table.U[ts, choice[ts]] - table.U[ss, choice[ss]]
            base_c = c - table.C[ts, choice[ts]] - table.C[ss, choice[ss]]
            nu = base_u[:, None, None] + table.U[ts][:, :, None] + table.U[ss][:, None, :]
            nc = base_c[:, None, None] + table.C[ts][:, :, None] + table.C[ss][:, None, :]
            score = np.where(_feasible(nu, nc, B, L), nu, -np.inf)
            j = int(np.argmax(score))
            if score.flat[j] > u + tol:
                p, rest = divmod(j, K * K)
                move = ((ts[p], rest // K), (ss[p], rest % K))
        if move is None:
            break
        trial = choice.copy()
        for t, k in move:
            trial[t] = k
        tu, tc = _evaluate(table, trial)
        if not _feasible(tu, tc, B, L):
            break
        choice, u, c = trial, tu, tc
    return choice


def solve_relaxed(table, B, L, tol=1e-9):
    H, K = table.U.shape
    res = _lp(table, B, L)
    if res.status != 0:
        choice = _local_search(table, np.zeros(H, dtype=int), B, L)
        return _solution(table, choice, np.inf, "relaxed", converged=False)
    z = np.clip(res.x.reshape(H, K), 0.0, 1.0)
    bound = -res.fun
    choice = z.argmax(1)
    frac = [t for t in range(H) if z[t].max() < 1 - tol]
    if frac:
        # enumerate the fractional slots (at most two in a basic optimum)
        grids = np.meshgrid(*[np.arange(K)] * len(frac), indexing="ij")
        best, best_key = None, None
        for combo in zip(*[g.ravel() for g in grids]):
            cand = choice.copy()
            cand[frac] = combo
            u, c = _evaluate(table, cand)
            if _feasible(u, c, B, L) and (best_key is None or (u, -c) > best_key):
                best, best_key = cand, (u, -c)
        choice = best if best is not None else np.zeros(H, dtype=int)
    else:
        u, c = _evaluate(table, choice)
        if not _feasible(u, c, B, L):
            choice = np.zeros(H, dtype=int)
    choice = _best_of(table, [_local_search(table, choice, B, L),
                              _local_search(table, _budget_dp(table, B, L), B, L)])
    u, _ = _evaluate(table, choice)
    return _solution(table, choice, max(bound, u), "relaxed")


def _best_of(table, choices):
    """Highest utility, then lower cost, then first given."""
    keyed = [(_evaluate(table, ch), i) for i, ch in enumerate(choices)]
    (_, _), i = max(keyed, key=lambda x: (x[0][0], -x[0][1], -x[1]))
    return choices[i]


def _budget_dp(table, B, L, buckets=2048):
    """Max utility per discretized spend level, slot by slot.

    Slot costs are rounded up to the bucket width, so any path that fits the
    bucket range is budget feasible.  For a given spend the highest utility
    is also the best for the ROI floor, so each bucket keeps only that.
    """
    H, K = table.U.shape
    if B <= 0:
        return np.zeros(H, dtype=int)
    width = B / buckets
    steps = np.ceil(table.C / width - 1e-12).astype(np.int64)
    best_u = np.full(buckets + 1, -np.inf)
    best_c = np.zeros(buckets + 1)
    best_u[0] = 0.0
    back = np.zeros((H, buckets + 1), dtype=np.int64)
    for t in range(H):
        cand_u = np.full((K, buckets + 1), -np.inf)
        cand_c = np.zeros((K, buckets + 1))
        for k in range(K):
            s = steps[t, k]
            if s <= buckets:
                cand_u[k, s:] = best_u[:buckets + 1 - s] + table.U[t, k]
                cand_c[k, s:] = best_c[:buckets + 1 - s] + table.C[t, k]
        kb = np.argmax(cand_u, axis=0)
        cols = np.arange(buckets + 1)
        best_u, best_c = cand_u[kb, cols], cand_c[kb, cols]
        back[t] = kb
    ok = np.isfinite(best_u) & _feasible(best_u, best_c, B, L)
    if not ok.any():
        return np.zeros(H, dtype=int)
    j = int(np.argmax(np.where(ok, best_u, -np.inf)))
    choice = np.zeros(H, dtype=int)
    for t in range(H - 1, -1, -1):
        choice[t] = back[t, j]
        j -= steps[t, choice[t]]
    return choice


def lp_is_integral(table, B, L, tol=1e-9):
    res = _lp(table, B, L)
    z = res.x.reshape(table.H, table.K)
    return bool(np.all((z < tol) | (z > 1 - tol))), -res.fun


# ---------------------------------------------------------------------------
# constant ratios with the full budget rule


def budget_enforced_totals(day, ratios):
    """Day (utility, cost) for each constant ratio under hard budget replay."""
    ratios = np.atleast_1d(np.asarray(ratios, dtype=np.float64))
    k = np.repeat(day.pricing.k_array(day.H), np.diff(day.slot_boundaries))
    bids = ratios[:, None] * day.utility_estimate[None, :]
    won = bids > day.market_price[None, :]
    cost = np.where(won, charge(bids, day.market_price[None, :], k[None, :]), 0.0)
    alive = np.cumsum(cost, axis=1) <= day.budget
    # once the budget rule trips, everything after is forfeited
    alive = np.logical_and.accumulate(alive, axis=1)
    util = np.where(won & alive, day.realized_utility[None, :], 0.0).sum(1)
    return util, np.where(alive, cost, 0.0).sum(1)


def best_constant_ratio(day, grid, B=None, L=None):
    if B is not None or L is not None:
        day = _with_constraints(day, B, L)
    u, c = budget_enforced_totals(day, grid.ratios)
    val = np.where(u >= day.roi_target * c, u, 0.0)
    j = int(np.argmax(val))
    return float(grid.ratios[j]), float(val[j])


def _with_constraints(day, B, L):
    from dataclasses import replace

    return replace(day, budget=day.budget if B is None else B, roi_target=day.roi_target if L is None else L)


def subset_totals(u_real, m):
    """(utility, second-price cost) of every win subset, in bitmask order."""
    n = len(m)
    if n > 22:
        raise InstanceTooLarge("subset enumeration limited to 22 auctions")
    masks = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.float64)
    return masks @ np.asarray(u_real, dtype=np.float64), masks @ np.asarray(m, dtype=np.float64)


def subset_optimum(u_est, u_real, m, B, L, totals=None):
    """Exact best subset of auctions (second-price costs m), by enumeration.

    ``totals`` may carry a precomputed ``subset_totals(u_real, m)``.
    """
    U, C = totals if totals is not None else subset_totals(u_real, m)
    ok = (C <= B) & (U >= L * C)
    return float(U[ok].max())


# ---------------------------------------------------------------------------
# experts for a dataset


@dataclass
class ExpertRecord:
    day_id: int
    ratios: list
    utility: float
    cost: float
    bound: float
    gap: float
    method: str
    replay_utility: float
    replay_cost: float
    flagged: bool


def solve_day(day, K=32, method="auto"):
    grid = day_grid(day, K)
    table = build_slot_aggregates(day, grid)
    if method == "bruteforce" or (method == "auto" and len(grid) ** day.H <= BRUTE_LIMIT):
        sol = solve_bruteforce(table, day.budget, day.roi_target)
    else:
        sol = solve_relaxed(table, day.budget, day.roi_target)
    return sol


def expert_for_day(day, K=32, method="auto"):
    """Solve, then validate by budget-enforced replay.  Returns (record, trajectory)."""
    sol = solve_day(day, K, method)
    traj = replay_actions(day, sol.ratios, tag="expert")
    out = traj.outcome
    flagged = abs(out.utility - sol.utility) > REPLAY_TOLERANCE * max(sol.utility, 1e-12)
    rec = ExpertRecord(int(day.day_id), [float(r) for r in sol.ratios], sol.utility, sol.cost,
                       sol.bound, sol.gap, sol.method, out.utility, out.cost, bool(flagged))
    return rec, traj


def save_experts(path, records):
    Path(path).write_text(json.dumps([asdict(r) for r in records], indent=1, sort_keys=True))


def load_experts(path):
    return [ExpertRecord(**r) for r in json.loads(Path(path).read_text())]
