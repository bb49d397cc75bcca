"""
Strided anchor windows for videos longer than the model's clip length.

Frames 1..L-1 are dealt round-robin into s = ceil((L-1)/F) groups; every pass
runs frame 0 followed by one group, with consecutive temporal indices 0..|g|.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

from ..errors import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass
class WindowPlan:
    length: int
    capacity: int
    stride: int
    groups: List[List[int]]
    pad: bool = False
    padding: List[int] = field(default_factory=list)

    def pass_frames(self, k: int) -> List[int]:
        """Original frame indices fed to pass k, anchor first (padding repeats the last frame)."""
        group = self.groups[k]
        return [0] + group + [group[-1]] * self.padding[k]

    def rope_indices(self, k: int) -> List[int]:
        return list(range(len(self.pass_frames(k))))

    @property
    def num_passes(self) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "capacity": self.capacity,
            "stride": self.stride,
            "groups": self.groups,
            "pad": self.pad,
            "padding": self.padding,
        }


def plan_windows(length: int, capacity: int, pad: bool = False) -> WindowPlan:
    """
    Interleaved grouping: frame i in 1..L-1 goes to group (i - 1) mod s.

    Args:
        length: Video length L (frames, anchor included)
        capacity: Frames per pass besides the anchor, F
        pad: Pad short groups to F frames by repeating their last frame

    Returns:
        The window plan
    """
    if length < 2:
        raise InvalidInputError(f"a video needs at least 2 frames, got {length}")
    if capacity < 1:
        raise InvalidInputError(f"window capacity must be >= 1, got {capacity}")

    stride = math.ceil((length - 1) / capacity)
    groups: List[List[int]] = [[] for _ in range(stride)]
    for i in range(1, length):
        groups[(i - 1) % stride].append(i)
    padding = [capacity - len(g) if pad else 0 for g in groups]
    if any(len(g) < capacity for g in groups):
        logger.debug(f"Plan L={length}, F={capacity}: short passes {[len(g) for g in groups]}")
    return WindowPlan(length=length, capacity=capacity, stride=stride, groups=groups, pad=pad, padding=padding)
