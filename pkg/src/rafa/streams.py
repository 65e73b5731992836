"""Per-purpose random streams derived from one master seed.

Each purpose owns a fixed integer tag, and its generator is seeded with
``SeedSequence([master_seed, tag])``. Streams never depend on each other, so adding a
new consumer leaves every existing stream untouched.
"""
from __future__ import annotations

import numpy as np

PURPOSES = {
    "environment": 1,  # environment generation
    "transitions": 2,  # initial state and environment dynamics
    "agent": 3,  # posterior sampling
    "planner": 4,  # MCTS successor sampling
}


def stream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), PURPOSES[purpose]])))
