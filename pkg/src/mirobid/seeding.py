"""Seed derivation.

Every random stream is derived from one master seed:

* day ``i`` of a dataset uses ``SeedSequence(master, spawn_key=(i,))``;
* named sub-streams (``"init"``, ``"rollout"``, ``"noise"``, ...) use
  ``SeedSequence([master, crc32(name)])`` and may be nested further.

so that ablations sharing a master seed see identical data streams.
"""

from __future__ import annotations

import zlib

import numpy as np


def day_rng(master, index):
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(int(index),)))


def sub_seed(master, *names):
    entropy = [int(master)] + [zlib.crc32(str(n).encode()) for n in names]
    return np.random.SeedSequence(entropy)


def sub_rng(master, *names):
    return np.random.default_rng(sub_seed(master, *names))
