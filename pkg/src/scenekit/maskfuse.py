"""Fusing class-agnostic instance masks with a semantic label map.

Each instance gets the modal class among its pixels by majority voting over
a dense semantic map; pixels carrying the map's ignore label do not vote.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Set, Tuple

import numpy as np

from .core.types import InstanceMask, SemanticInstance
from .errors import ContractViolation

DEFAULT_BACKGROUND_CLASSES = ("wall", "floor", "ceiling", "window", "door")


@dataclass(frozen=True)
class SemanticMap:
    """Dense per-pixel class ids with a designated ignore label."""

    labels: np.ndarray
    ignore_label: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if arr.ndim != 2:
            raise ContractViolation("semantic labels must be 2-D")
        if arr.size and arr.min() < 0:
            raise ContractViolation("class ids must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def fuse_semantics(
    instances: Sequence[InstanceMask], semantic: SemanticMap
) -> List[SemanticInstance]:
    """Assign each instance the majority class among its non-ignore pixels.

    Vote ties break toward the lowest class id. Instances with no voting
    pixels (empty mask or all-ignore coverage) get the ignore label with
    confidence 0. Masks are passed through untouched.
    """
    out = []
    for inst in instances:
        if inst.bitmap.shape != semantic.labels.shape:
            raise ContractViolation(
                f"instance {inst.id} mask {inst.bitmap.shape} does not match "
                f"semantic map {semantic.labels.shape}"
            )
        covered = semantic.labels[inst.bitmap]
        votes = covered[covered != semantic.ignore_label]
        if votes.size == 0:
            out.append(SemanticInstance(inst, semantic.ignore_label, 0.0))
            continue
        counts = np.bincount(votes)
        winner = int(np.argmax(counts))  # argmax takes the first (lowest) id on ties
        out.append(SemanticInstance(inst, winner, float(counts[winner]) / float(votes.size)))
    return out


def classify_background(
    instances: Iterable[SemanticInstance], background_classes: Set[int]
) -> Tuple[List[SemanticInstance], List[SemanticInstance]]:
    """Partition instances into (foreground, background) by label membership."""
    foreground, background = [], []
    for inst in instances:
        (background if inst.label in background_classes else foreground).append(inst)
    return foreground, background
