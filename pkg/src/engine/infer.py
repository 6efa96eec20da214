import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.config import MAX_SAMPLING_ATTEMPTS, MC_SAMPLES
from src.engine.hmm import HmmParams
from src.engine.nnet import ForwardCache
from src.engine.scv import CellCounter, FrameScorer
from src.errors import ContractViolation, InfeasibleError, SamplingError
from src.models.segmentation import Segmentation

logger = logging.getLogger(__name__)


class GrammarPool:
    """Distinct ground-truth sets seen in training, with multiplicities."""

    def __init__(self, sets: Iterable[Iterable[int]]):
        counts = Counter(frozenset(s) for s in sets)
        if not counts:
            raise ContractViolation("Grammar pool needs at least one training set")
        if any(not s for s in counts):
            raise ContractViolation("Grammar pool sets must be nonempty")
        self.sets: List[FrozenSet[int]] = sorted(counts, key=lambda s: sorted(s))
        self.multiplicity: List[int] = [counts[s] for s in self.sets]

    def __len__(self):
        return len(self.sets)

    def sample(self, rng: np.random.Generator, weighted: bool = False) -> FrozenSet[int]:
        if weighted:
            p = np.asarray(self.multiplicity, dtype=np.float64)
            return self.sets[int(rng.choice(len(self.sets), p=p / p.sum()))]
        return self.sets[int(rng.integers(len(self.sets)))]

    def feasible(self, params: HmmParams, T: int) -> "GrammarPool":
        keep = [s for s in self.sets if budget(s, params) <= T]
        if not keep:
            raise InfeasibleError(f"No training set fits a video of {T} frames")
        pool = GrammarPool(keep)
        pool.multiplicity = [self.multiplicity[self.sets.index(s)] for s in pool.sets]
        return pool


@dataclass(frozen=True)
class CandidateSequence:
    classes: Tuple[int, ...]
    source: FrozenSet[int]

    def is_legal(self, params: HmmParams, T: int) -> bool:
        no_repeats = all(a != b for a, b in zip(self.classes[:-1], self.classes[1:]))
        return (
            self.source <= set(self.classes)
            and no_repeats
            and budget(self.classes, params) <= T
        )


def budget(classes: Iterable[int], params: HmmParams) -> float:
    return float(sum(params.lengths[c] for c in classes))


def sample_legal_sequence(
    action_set: Iterable[int], T: int, params: HmmParams, rng: np.random.Generator
) -> Optional[CandidateSequence]:
    """Draw actions uniformly from the set until the length budget would overflow.

    Returns None when the draw misses a class of the set.
    """
    source = frozenset(action_set)
    if not source:
        raise ContractViolation("Cannot sample from an empty action set")
    if budget(source, params) > T:
        return None
    pool = sorted(source)
    sequence: List[int] = []
    used = 0.0
    while True:
        choices = [c for c in pool if not sequence or c != sequence[-1]]
        if not choices:
            break
        nxt = choices[int(rng.integers(len(choices)))]
        if used + params.lengths[nxt] > T:
            break
        sequence.append(nxt)
        used += params.lengths[nxt]
    if not source <= set(sequence):
        return None
    return CandidateSequence(classes=tuple(sequence), source=source)


def align_lengths(
    classes: Sequence[int],
    cache: ForwardCache,
    params: HmmParams,
    max_length: Optional[int] = None,
    counter: Optional[CellCounter] = None,
    scorer: Optional[FrameScorer] = None,
) -> Tuple[Segmentation, float]:
    """Best segment lengths for a fixed class ordering.

    The returned posterior includes the ordering's transition terms.
    """
    classes = list(classes)
    T = cache.T
    n = len(classes)
    if n == 0 or n > T:
        raise ContractViolation(f"Cannot align {n} actions to {T} frames")
    if any(a == b for a, b in zip(classes[:-1], classes[1:])):
        raise ContractViolation("Candidate ordering repeats a class on adjacent positions")
    scorer = scorer or FrameScorer(cache, params)

    ends = np.arange(T + 1)
    durations = ends[None, :] - ends[:, None]
    valid = durations >= 1
    if max_length is not None:
        valid &= durations <= max_length
    safe = np.where(valid, durations, 0)

    best = np.full((n + 1, T + 1), -np.inf)
    best[0, 0] = 0.0
    back = np.zeros((n + 1, T + 1), dtype=np.int64)
    updates = 0
    for k, class_id in enumerate(classes, start=1):
        cum = scorer.cum[class_id]
        gain = scorer.poisson[class_id][safe] + (cum[None, :] - cum[:, None])
        total = np.where(valid, best[k - 1][:, None] + gain, -np.inf)
        back[k] = np.argmax(total, axis=0)
        best[k] = total[back[k], ends]
        updates += T * (T + 1) // 2

    if counter is not None:
        counter.add(updates)
    if not np.isfinite(best[n, T]):
        raise InfeasibleError(f"No length assignment for {n} actions in {T} frames")

    lengths = []
    t = T
    for k in range(n, 0, -1):
        start = int(back[k, t])
        lengths.append(t - start)
        t = start
    seg = Segmentation(tuple(zip(classes, reversed(lengths))))
    return seg, float(best[n, T]) + params.sequence_transition_score(classes)


@dataclass
class MonteCarloResult:
    segmentation: Segmentation
    log_posterior: float
    accepted: int
    attempts: int
    distinct: int


def _monte_carlo(
    cache: ForwardCache,
    params: HmmParams,
    pool: GrammarPool,
    K: int,
    rng: np.random.Generator,
    weighted: bool,
    max_attempts: int,
    counter: Optional[CellCounter],
) -> MonteCarloResult:
    if K < 1:
        raise ContractViolation(f"K must be >= 1, got {K}")
    T = cache.T
    pool = pool.feasible(params, T)
    scorer = FrameScorer(cache, params)
    aligned: Dict[Tuple[int, ...], Tuple[Segmentation, float]] = {}
    best: Optional[Tuple[Segmentation, float]] = None
    accepted = attempts = 0
    while accepted < K:
        if attempts >= max_attempts:
            logger.error(f"Monte Carlo sampling accepted {accepted}/{K} sequences in {attempts} attempts")
            raise SamplingError(f"Only {accepted} legal sequences after {attempts} attempts")
        attempts += 1
        candidate = sample_legal_sequence(pool.sample(rng, weighted), T, params, rng)
        if candidate is None:
            continue
        accepted += 1
        if candidate.classes not in aligned:
            aligned[candidate.classes] = align_lengths(candidate.classes, cache, params, counter=counter, scorer=scorer)
        result = aligned[candidate.classes]
        if best is None or result[1] > best[1]:
            best = result
    logger.debug(f"Monte Carlo: {accepted} accepted, {attempts} attempts, {len(aligned)} distinct")
    return MonteCarloResult(
        segmentation=best[0],
        log_posterior=best[1],
        accepted=accepted,
        attempts=attempts,
        distinct=len(aligned),
    )


def mc_segment(
    cache: ForwardCache,
    params: HmmParams,
    pool: GrammarPool,
    K: int = MC_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    weighted: bool = False,
    max_attempts: int = MAX_SAMPLING_ATTEMPTS,
    counter: Optional[CellCounter] = None,
) -> MonteCarloResult:
    """Segment a test video with the Monte Carlo grammar over training sets."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return _monte_carlo(cache, params, pool, K, rng, weighted, max_attempts, counter)


def mc_align(
    cache: ForwardCache,
    params: HmmParams,
    action_set: Iterable[int],
    K: int = MC_SAMPLES,
    rng: Optional[np.random.Generator] = None,
    max_attempts: int = MAX_SAMPLING_ATTEMPTS,
    counter: Optional[CellCounter] = None,
) -> MonteCarloResult:
    """Align a test video given its ground-truth set."""
    source = frozenset(action_set)
    if not source:
        raise ContractViolation("Alignment needs a nonempty action set")
    if budget(source, params) > cache.T:
        raise InfeasibleError(
            f"Expected lengths of {sorted(source)} exceed the video's {cache.T} frames"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    return _monte_carlo(cache, params, GrammarPool([source]), K, rng, False, max_attempts, counter)


def best_transcript(
    cache: ForwardCache, params: HmmParams, transcripts: Iterable[Sequence[int]]
) -> Tuple[Segmentation, float]:
    """Best alignment among given orderings (transcript grammar)."""
    scorer = FrameScorer(cache, params)
    best = None
    for transcript in transcripts:
        if len(transcript) > cache.T:
            continue
        result = align_lengths(transcript, cache, params, scorer=scorer)
        if best is None or result[1] > best[1]:
            best = result
    if best is None:
        raise InfeasibleError("No transcript fits the video")
    return best
