from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..detect_eval.boxes import BBox


@dataclass
class SensorFrame:
    """One camera image, its lidar representation and ground truth.

    ``rgb`` is ``(H, W, 3)`` uint8. ``depth`` is a float32 grid with ``inf``
    for missing returns; camera-sized for sparse/dense depth, range-image
    sized otherwise.
    """

    rgb: np.ndarray
    depth: np.ndarray
    boxes: list[BBox] = field(default_factory=list)
    tag: object = None
    frame_id: str = ""

    def copy(self, **changes) -> "SensorFrame":
        out = replace(self, rgb=self.rgb.copy(), depth=self.depth.copy(), boxes=list(self.boxes))
        return replace(out, **changes) if changes else out
