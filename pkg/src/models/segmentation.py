from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np

from src.errors import ContractViolation


@dataclass(frozen=True)
class Segmentation:
    """Ordered (class id, length) segments in canonical form.

    Adjacent segments never share a class; use ``Segmentation.canonical`` to
    merge raw segment lists and ``Segmentation.from_labels`` for framewise
    labels.
    """

    segments: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        segments = tuple((int(c), int(l)) for c, l in self.segments)
        object.__setattr__(self, "segments", segments)
        previous = None
        for class_id, length in segments:
            if length < 1:
                raise ContractViolation(f"Segment length must be >= 1, got {length}")
            if class_id < 0:
                raise ContractViolation(f"Negative class id {class_id}")
            if class_id == previous:
                raise ContractViolation(
                    f"Adjacent segments share class {class_id}; canonicalize first"
                )
            previous = class_id

    @classmethod
    def canonical(cls, segments: Iterable[Tuple[int, int]]) -> "Segmentation":
        merged: List[List[int]] = []
        for class_id, length in segments:
            if merged and merged[-1][0] == class_id:
                merged[-1][1] += length
            else:
                merged.append([class_id, length])
        return cls(tuple((c, l) for c, l in merged))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Segmentation":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return cls(())
        change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [labels.size]))
        return cls(tuple((int(labels[s]), int(e - s)) for s, e in zip(starts, ends)))

    def __len__(self):
        return len(self.segments)

    @property
    def T(self) -> int:
        return sum(l for _, l in self.segments)

    @property
    def classes(self) -> List[int]:
        return [c for c, _ in self.segments]

    @property
    def lengths(self) -> List[int]:
        return [l for _, l in self.segments]

    @property
    def class_set(self) -> FrozenSet[int]:
        return frozenset(self.classes)

    def starts(self) -> List[int]:
        out, t = [], 0
        for _, length in self.segments:
            out.append(t)
            t += length
        return out

    def intervals(self) -> List[Tuple[int, int, int]]:
        """(class id, first frame, last frame) per segment, inclusive."""
        return [(c, s, s + l - 1) for (c, l), s in zip(self.segments, self.starts())]

    def labels(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0, dtype=np.int64)
        return np.repeat(
            np.array(self.classes, dtype=np.int64), np.array(self.lengths, dtype=np.int64)
        )

    def covers(self, action_set: Iterable[int]) -> bool:
        return set(action_set) <= self.class_set


@dataclass(frozen=True)
class Oversegment:
    parent: int
    start: int
    end: int
    class_id: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1
