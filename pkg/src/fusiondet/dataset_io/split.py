from __future__ import annotations

from dataclasses import dataclass

from ..errors import SplitOverflow


@dataclass(frozen=True)
class SplitSpec:
    """Order-based split: the first ``test`` frames, the next ``train``, the rest is validation."""

    test: int = 500
    train: int = 6500

    def __post_init__(self):
        if self.test < 0 or self.train < 0:
            raise ValueError("split sizes must be non-negative")


def apply_split(frames, spec: SplitSpec = SplitSpec()):
    frames = list(frames)
    if spec.test + spec.train > len(frames):
        raise SplitOverflow(
            f"split needs {spec.test} + {spec.train} frames but the dataset has {len(frames)}"
        )
    a, b = spec.test, spec.test + spec.train
    return frames[:a], frames[a:b], frames[b:]
