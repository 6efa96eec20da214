import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from src.config import FLIP_PASSES
from src.engine.hmm import HmmParams
from src.engine.nnet import ForwardCache
from src.errors import ContractViolation, CoverageError, InfeasibleError, VocabularyError
from src.models.segmentation import Oversegment, Segmentation

logger = logging.getLogger(__name__)


class CellCounter:
    """Counts DP relaxations; used to check the quadratic scaling of the decoders."""

    def __init__(self):
        self.updates = 0

    def add(self, n: int):
        self.updates += int(n)


class FrameScorer:
    """Cumulative per-class frame terms log softmax(f)[c,t] - log p(c) for one video."""

    def __init__(self, cache: ForwardCache, params: HmmParams):
        if cache.n_classes != params.n_classes:
            raise ContractViolation(
                f"Network scores {cache.n_classes} classes, HMM has {params.n_classes}"
            )
        self.params = params
        self.T = cache.T
        frame = cache.log_softmax - params.log_priors[:, None]
        self.cum = np.concatenate((np.zeros((params.n_classes, 1)), np.cumsum(frame, axis=1)), axis=1)
        self.poisson = params.poisson_table(max(self.T, 1))

    def frames(self, class_id: int, start: int, end: int) -> float:
        """Sum of frame terms of class over frames [start, end)."""
        return float(self.cum[class_id, end] - self.cum[class_id, start])

    def score(self, seg: Segmentation) -> float:
        if seg.T != self.T:
            raise ContractViolation(f"Segmentation covers {seg.T} frames, video has {self.T}")
        if seg.segments and max(seg.classes) >= self.params.n_classes:
            raise VocabularyError(f"Segmentation uses a class outside the vocabulary")
        total = self.params.sequence_transition_score(seg.classes)
        t = 0
        for class_id, length in seg.segments:
            total += self.poisson[class_id, length] + self.frames(class_id, t, t + length)
            t += length
        return float(total)


def log_posterior(seg: Segmentation, cache: ForwardCache, params: HmmParams) -> float:
    return FrameScorer(cache, params).score(seg)


@dataclass
class ViterbiTable:
    """Best log-posteriors of paths ending with classes[j] at frame t (column 0 is the start)."""

    classes: tuple
    scores: np.ndarray
    back_frames: np.ndarray
    back_classes: np.ndarray
    acc_lengths: np.ndarray
    cell_updates: int = 0

    @property
    def T(self) -> int:
        return self.scores.shape[1] - 1

    def best_final(self) -> tuple[int, float]:
        j = int(np.argmax(self.scores[:, -1]))
        return j, float(self.scores[j, -1])


def viterbi_table(
    cache: ForwardCache,
    params: HmmParams,
    action_set: Iterable[int],
    prune: bool = False,
    counter: Optional[CellCounter] = None,
    scorer: Optional[FrameScorer] = None,
) -> ViterbiTable:
    classes = tuple(sorted(set(action_set)))
    if not classes:
        raise ContractViolation("Viterbi decoding needs a nonempty class set")
    if max(classes) >= params.n_classes or min(classes) < 0:
        raise VocabularyError(f"Classes {classes} outside vocabulary of size {params.n_classes}")
    T = cache.T
    if T < 1:
        raise ContractViolation("Viterbi decoding needs at least one frame")
    scorer = scorer or FrameScorer(cache, params)

    m = len(classes)
    idx = np.array(classes)
    pois = scorer.poisson[idx]
    cum = scorer.cum[idx]
    lam = params.lengths[idx]
    trans = params.log_transitions[np.ix_(idx, idx)].copy()
    np.fill_diagonal(trans, -np.inf)

    scores = np.full((m, T + 1), -np.inf)
    back_frames = np.zeros((m, T + 1), dtype=np.int64)
    back_classes = np.full((m, T + 1), -1, dtype=np.int64)
    acc = np.zeros((m, T + 1))
    # best predecessor value for entering class j right after frame t'
    entry = np.full((m, T + 1), -np.inf)
    entry[:, 0] = 0.0
    entry_from = np.full((m, T + 1), -1, dtype=np.int64)
    updates = 0

    for t in range(1, T + 1):
        starts = np.arange(t)
        total = entry[:, :t] + pois[:, t - starts] + (cum[:, t][:, None] - cum[:, :t])
        best = np.argmax(total, axis=1)
        rows = np.arange(m)
        scores[:, t] = total[rows, best]
        back_frames[:, t] = best
        back_classes[:, t] = entry_from[rows, best]
        prev_acc = np.where(best > 0, acc[np.maximum(entry_from[rows, best], 0), best], 0.0)
        acc[:, t] = prev_acc + lam
        updates += m * t

        if t < T:
            candidates = scores[:, t][:, None] + trans
            if prune:
                over = acc[:, t][:, None] + lam[None, :] > T
                candidates = np.where(over, -np.inf, candidates)
            entry_from[:, t] = np.argmax(candidates, axis=0)
            entry[:, t] = candidates[entry_from[:, t], rows]
            updates += m * m

    if counter is not None:
        counter.add(updates)
    return ViterbiTable(
        classes=classes,
        scores=scores,
        back_frames=back_frames,
        back_classes=back_classes,
        acc_lengths=acc,
        cell_updates=updates,
    )


def backtrace(table: ViterbiTable) -> Segmentation:
    j, best = table.best_final()
    if not np.isfinite(best):
        logger.error("Every Viterbi cell at the last frame is infeasible")
        raise InfeasibleError("No admissible segmentation for this class set")
    segments = []
    t = table.T
    while t > 0:
        start = int(table.back_frames[j, t])
        segments.append((table.classes[j], t - start))
        j, t = int(table.back_classes[j, t]), start
    return Segmentation(tuple(reversed(segments)))


def viterbi_map(
    cache: ForwardCache,
    params: HmmParams,
    action_set: Iterable[int],
    prune: bool = False,
    counter: Optional[CellCounter] = None,
) -> Segmentation:
    return backtrace(viterbi_table(cache, params, action_set, prune=prune, counter=counter))


def _cosine_similarities(h: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(h, axis=0)
    unit = np.divide(h, norms, out=np.zeros_like(h), where=norms > 0)
    return np.einsum("it,it->t", unit[:, :-1], unit[:, 1:])


def oversegment(seg: Segmentation, cache: ForwardCache) -> List[Oversegment]:
    """Split every segment at its frame of minimum consecutive cosine similarity."""
    if seg.T != cache.T:
        raise ContractViolation(f"Segmentation covers {seg.T} frames, video has {cache.T}")
    similarity = _cosine_similarities(cache.h)
    out = []
    for n, (class_id, start, end) in enumerate(seg.intervals()):
        if end == start:
            out.append(Oversegment(parent=n, start=start, end=end, class_id=class_id))
            continue
        k = int(np.argmin(similarity[start:end]))
        out.append(Oversegment(parent=n, start=start, end=start + k, class_id=class_id))
        out.append(Oversegment(parent=n, start=start + k + 1, end=end, class_id=class_id))
    return out


@dataclass(frozen=True)
class FlipRecord:
    index: int
    oversegment: Oversegment
    class_id: int
    score: float
    segmentation: Segmentation = field(repr=False, compare=False)


def flip_candidates(
    labels: np.ndarray,
    oversegments: Sequence[Oversegment],
    flipped: Iterable[int],
    missing: Iterable[int],
    scorer: FrameScorer,
) -> Iterator[FlipRecord]:
    """Every legal (oversegment, missing class) flip, classes ascending then time ascending.

    A flip is legal when the oversegment has not been flipped yet and its
    current class survives elsewhere in the video.
    """
    flipped = set(flipped)
    counts = np.bincount(labels, minlength=scorer.params.n_classes)
    for class_id in sorted(missing):
        for index, ovs in enumerate(oversegments):
            if index in flipped or counts[ovs.class_id] <= ovs.length:
                continue
            candidate = labels.copy()
            candidate[ovs.start:ovs.end + 1] = class_id
            seg = Segmentation.from_labels(candidate)
            yield FlipRecord(index=index, oversegment=ovs, class_id=class_id, score=scorer.score(seg), segmentation=seg)


def flip_to_cover(
    seg: Segmentation,
    oversegments: Sequence[Oversegment],
    cache: ForwardCache,
    params: HmmParams,
    action_set: Iterable[int],
    history: Optional[list] = None,
    scorer: Optional[FrameScorer] = None,
) -> Segmentation:
    required = frozenset(action_set)
    if seg.covers(required):
        return seg
    scorer = scorer or FrameScorer(cache, params)
    labels = seg.labels()
    flipped = set()
    current = seg
    while True:
        missing = required - current.class_set
        if not missing:
            return current
        best = None
        for candidate in flip_candidates(labels, oversegments, flipped, missing, scorer):
            if best is None or candidate.score > best.score:
                best = candidate
        if best is None:
            raise CoverageError(
                f"No flippable oversegment left for classes {sorted(missing)}",
                partial=current,
                missing=sorted(missing),
            )
        ovs = best.oversegment
        labels[ovs.start:ovs.end + 1] = best.class_id
        flipped.add(best.index)
        current = best.segmentation
        if history is not None:
            history.append(best)


def scv_decode(
    cache: ForwardCache,
    params: HmmParams,
    action_set: Iterable[int],
    prune: bool = False,
    max_passes: int = FLIP_PASSES,
    history: Optional[list] = None,
    counter: Optional[CellCounter] = None,
) -> Segmentation:
    """MAP segmentation restricted to, and covering, the ground-truth set."""
    required = frozenset(action_set)
    if not required:
        raise ContractViolation("Ground-truth set must be nonempty")
    if cache.T < len(required):
        raise CoverageError(
            f"Video of {cache.T} frames cannot cover {len(required)} classes",
            missing=sorted(required),
        )
    scorer = FrameScorer(cache, params)
    seg = backtrace(viterbi_table(cache, params, required, prune=prune, counter=counter, scorer=scorer))
    for attempt in range(max_passes):
        if seg.covers(required):
            return seg
        try:
            return flip_to_cover(seg, oversegment(seg, cache), cache, params, required, history=history, scorer=scorer)
        except CoverageError as e:
            logger.warning(f"Flip pass {attempt + 1} left {list(e.missing)} uncovered, re-oversegmenting")
            seg = e.partial
    if seg.covers(required):
        return seg
    logger.error(f"Could not cover {sorted(required - seg.class_set)} after {max_passes} flip passes")
    raise CoverageError(
        f"Classes {sorted(required - seg.class_set)} still missing after {max_passes} passes",
        partial=seg,
        missing=sorted(required - seg.class_set),
    )
