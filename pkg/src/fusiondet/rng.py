"""Counter-based per-frame random streams."""
from __future__ import annotations

import numpy as np

SCENE_STREAM = 1
CORRUPTION_STREAM = 2


def frame_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed on ``(seed, index)``; ``stream`` picks a disjoint counter range."""
    key = ((int(seed) % 2**64) << 64) | (int(index) % 2**64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, int(stream)]))
