"""Shared instance generators for the test suite."""

import numpy as np

from mirobid.oracle import RatioGrid, SlotAggregateTable

# a config small enough to run the whole CLI pipeline in seconds
TINY = {
    "generator": {"days": 6, "auctions_per_day": 400, "H": 4, "train_gsp": 1, "train_mix": 2, "test_gsp": 1,
                  "test_mix": 2},
    "world_model": {"hidden": 8, "head_hidden": 8, "latent_dim": 2, "steps": 10, "explore_per_day": 2,
                    "refresh_steps": 2},
    "policy": {"hidden": 8, "head_hidden": 8, "latent_dim": 2},
    "teacher": {"n": 3, "steps": 2},
    "train": {"iters": 6, "refresh_every": 3},
    "cem": {"iterations": 2, "population": 8},
}


def table(U, C):
    U, C = np.asarray(U, float), np.asarray(C, float)
    return SlotAggregateTable(U, C, RatioGrid(np.concatenate([[0.0], np.arange(1, U.shape[1])])))


def random_table(rng, H, K):
    """Monotone random slot tables with a zero abstain column."""
    dU = rng.exponential(1.0, (H, K - 1))
    dC = rng.exponential(1.0, (H, K - 1)) * rng.uniform(0.3, 2.0, (H, 1))
    U = np.concatenate([np.zeros((H, 1)), np.cumsum(dU, 1)], 1)
    C = np.concatenate([np.zeros((H, 1)), np.cumsum(dC, 1)], 1)
    B = rng.uniform(0.2, 0.8) * C[:, -1].sum()
    L = rng.uniform(0.5, 1.5) * U[:, -1].sum() / C[:, -1].sum()
    return table(U, C), B, L
