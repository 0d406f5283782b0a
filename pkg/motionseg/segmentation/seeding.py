"""
Deterministic seed splitting. Every random draw in a run descends from one
root seed; each consumer gets its own stream keyed by (stage, indices...).
"""

import numpy as np

STAGE_SAMPLING = 0
STAGE_KMEANS = 1
STAGE_NOISE = 2


def derive_seed(root, *key: int) -> np.random.SeedSequence:
    if isinstance(root, np.random.SeedSequence):
        return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + tuple(key))
    return np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in key))
