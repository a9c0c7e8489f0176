"""Wall-clock timing of forward pass plus decoding and NMS."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class TimingStats:
    median_ms: float
    p90_ms: float
    repetitions: int

    def to_dict(self) -> dict:
        return asdict(self)


def bench_inference(detector, rgb_batch, depth_batch, repetitions: int = 100, warmup: int = 3,
                    clock=time.perf_counter) -> TimingStats:
    """Time ``detector.detect`` on one batch; warm-up calls are not recorded."""
    if repetitions < 1 or warmup < 0:
        raise ValueError("repetitions must be >= 1 and warmup >= 0")
    for _ in range(warmup):
        detector.detect(rgb_batch, depth_batch)
    samples = np.empty(repetitions)
    for i in range(repetitions):
        t = clock()
        detector.detect(rgb_batch, depth_batch)
        samples[i] = (clock() - t) * 1e3
    return TimingStats(float(np.median(samples)), float(np.percentile(samples, 90)), repetitions)
