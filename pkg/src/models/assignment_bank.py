import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Mapping, Optional

import numpy as np

from src.errors import ContractViolation
from src.models.segmentation import Segmentation

logger = logging.getLogger(__name__)


@dataclass
class BankCounts:
    """Sufficient statistics of a set of MAP segmentations.

    pairs[c, c'] counts predicted consecutive pairs c -> c', segments[c] the
    predicted segments of c, frames[c] their summed lengths.
    """

    pairs: np.ndarray
    segments: np.ndarray
    frames: np.ndarray
    total_frames: float = 0.0

    @classmethod
    def empty(cls, n_classes: int) -> "BankCounts":
        return cls(
            pairs=np.zeros((n_classes, n_classes)),
            segments=np.zeros(n_classes),
            frames=np.zeros(n_classes),
        )

    @classmethod
    def from_segmentations(cls, segmentations: Iterable[Segmentation], n_classes: int) -> "BankCounts":
        counts = cls.empty(n_classes)
        for seg in segmentations:
            counts.add(seg)
        return counts

    def add(self, seg: Segmentation, sign: float = 1.0):
        classes = seg.classes
        for prev, nxt in zip(classes[:-1], classes[1:]):
            self.pairs[prev, nxt] += sign
        for class_id, length in seg.segments:
            self.segments[class_id] += sign
            self.frames[class_id] += sign * length
        self.total_frames += sign * seg.T

    def remove(self, seg: Segmentation):
        self.add(seg, sign=-1.0)

    def max_abs_difference(self, other: "BankCounts") -> float:
        return float(max(
            np.abs(self.pairs - other.pairs).max(initial=0.0),
            np.abs(self.segments - other.segments).max(initial=0.0),
            np.abs(self.frames - other.frames).max(initial=0.0),
            abs(self.total_frames - other.total_frames),
        ))


class MapAssignmentBank:
    """Latest SCV segmentation of every training video.

    Entries must stay inside, and cover, the video's ground-truth set. The
    aggregate counts are maintained incrementally on every insert.
    """

    def __init__(self, ground_truth: Mapping[str, Iterable[int]], n_classes: int):
        self.ground_truth: Dict[str, FrozenSet[int]] = {
            video_id: frozenset(classes) for video_id, classes in ground_truth.items()
        }
        self.n_classes = n_classes
        self.cache: Dict[str, Segmentation] = {}
        self.counts = BankCounts.empty(n_classes)

    def __len__(self):
        return len(self.cache)

    def __contains__(self, video_id: str):
        return video_id in self.cache

    def insert(self, video_id: str, seg: Segmentation):
        if video_id not in self.ground_truth:
            logger.error(f"Bank insert for unknown video: {video_id}")
            raise ContractViolation(f"Unknown video id: {video_id}")
        expected = self.ground_truth[video_id]
        if seg.class_set != expected:
            raise ContractViolation(
                f"Segmentation of {video_id} uses classes {sorted(seg.class_set)}, "
                f"ground truth is {sorted(expected)}"
            )
        previous = self.cache.get(video_id)
        if previous is not None:
            self.counts.remove(previous)
        self.cache[video_id] = seg
        self.counts.add(seg)

    def get(self, video_id: str) -> Optional[Segmentation]:
        return self.cache.get(video_id)

    def is_complete(self) -> bool:
        return set(self.cache) == set(self.ground_truth)

    def segmentations(self):
        return [self.cache[video_id] for video_id in sorted(self.cache)]

    def recount(self) -> float:
        """Rebuild counts from scratch; returns the drift of the incremental counts."""
        fresh = BankCounts.from_segmentations(self.segmentations(), self.n_classes)
        drift = fresh.max_abs_difference(self.counts)
        self.counts = fresh
        return drift

    def get_cache_data(self):
        return {
            "videos": len(self.cache),
            "segments": int(self.counts.segments.sum()),
            "frames": int(self.counts.total_frames),
        }
