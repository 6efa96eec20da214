"""Brute-force reference solutions for small instances, used by the test suite."""
import itertools
import logging
from typing import Iterable, Iterator, List, Sequence, Tuple

import numpy as np

from src.config import ORACLE_MAX_CLASSES, ORACLE_MAX_FRAMES
from src.engine.hmm import HmmParams
from src.engine.nnet import ForwardCache
from src.engine.scv import FrameScorer
from src.errors import ContractViolation, InfeasibleError, OracleGuardError
from src.models.segmentation import Segmentation

logger = logging.getLogger(__name__)


CHUNK = 1 << 17


def _all_labelings(classes: Sequence[int], T: int) -> Iterator[np.ndarray]:
    """All |classes|^T framewise labelings, in chunks of rows."""
    m = len(classes)
    powers = m ** np.arange(T - 1, -1, -1, dtype=np.int64)
    lookup = np.asarray(classes, dtype=np.int64)
    total = m**T
    for first in range(0, total, CHUNK):
        codes = np.arange(first, min(first + CHUNK, total), dtype=np.int64)
        yield lookup[(codes[:, None] // powers[None, :]) % m]


def _score_labelings(labelings: np.ndarray, scorer: FrameScorer) -> np.ndarray:
    """Vectorized log-posterior of every framewise labeling (one per row)."""
    params = scorer.params
    n, T = labelings.shape
    frame = scorer.cum[:, 1:] - scorer.cum[:, :-1]
    score = frame[labelings, np.arange(T)[None, :]].sum(axis=1)
    run = np.ones(n, dtype=np.int64)
    rows = np.arange(n)
    for t in range(1, T):
        prev, cur = labelings[:, t - 1], labelings[:, t]
        ends = prev != cur
        score[ends] += scorer.poisson[prev[ends], run[ends]] + params.log_transitions[prev[ends], cur[ends]]
        run = np.where(ends, 1, run + 1)
    score += scorer.poisson[labelings[rows, T - 1], run]
    return score


def oracle_exhaustive_map(
    cache: ForwardCache,
    params: HmmParams,
    action_set: Iterable[int],
    cover_required: bool = False,
    max_frames: int = ORACLE_MAX_FRAMES,
    max_classes: int = ORACLE_MAX_CLASSES,
) -> Tuple[Segmentation, float]:
    """Best segmentation over all framewise labelings with classes from the set."""
    classes = sorted(set(action_set))
    T = cache.T
    if not classes or T < 1:
        raise ContractViolation("Oracle needs a nonempty class set and at least one frame")
    if T > max_frames or len(classes) > max_classes:
        raise OracleGuardError(
            f"Refusing to enumerate {len(classes)}^{T} labelings (limits T<={max_frames}, |C|<={max_classes})"
        )
    scorer = FrameScorer(cache, params)
    best_labels, best_score = None, -np.inf
    for labelings in _all_labelings(classes, T):
        if cover_required:
            covers = np.ones(len(labelings), dtype=bool)
            for c in classes:
                covers &= (labelings == c).any(axis=1)
            labelings = labelings[covers]
            if len(labelings) == 0:
                continue
        scores = _score_labelings(labelings, scorer)
        i = int(np.argmax(scores))
        if best_labels is None or scores[i] > best_score:
            best_labels, best_score = labelings[i], float(scores[i])
    if best_labels is None:
        raise InfeasibleError(f"No labeling of {T} frames covers {len(classes)} classes")
    return Segmentation.from_labels(best_labels), best_score


def oracle_best_boundaries(
    classes: Sequence[int], cache: ForwardCache, params: HmmParams
) -> Tuple[Segmentation, float]:
    """Exhaustive search over boundary placements for a fixed ordering."""
    T, n = cache.T, len(classes)
    if n > T:
        raise ContractViolation(f"Cannot place {n} actions in {T} frames")
    if T > 3 * max(ORACLE_MAX_FRAMES, 1):
        raise OracleGuardError(f"Refusing boundary enumeration for T={T}")
    scorer = FrameScorer(cache, params)
    best, best_score = None, -np.inf
    for cuts in itertools.combinations(range(1, T), n - 1):
        bounds = (0,) + cuts + (T,)
        seg = Segmentation(tuple((c, b - a) for c, a, b in zip(classes, bounds[:-1], bounds[1:])))
        score = scorer.score(seg)
        if score > best_score:
            best, best_score = seg, score
    return best, float(best_score)


def enumerate_legal_sequences(
    action_set: Iterable[int], T: int, params: HmmParams, terminal_only: bool = True
) -> List[Tuple[int, ...]]:
    """Every ordering covering the set, without adjacent repeats, within the length budget.

    With ``terminal_only`` only orderings the sampler can stop on are kept:
    some admissible next class would overflow the budget.
    """
    classes = sorted(set(action_set))
    lengths = params.lengths
    out = []

    def extend(prefix: List[int], used: float):
        nexts = [c for c in classes if not prefix or prefix[-1] != c]
        overflow = not nexts or any(used + lengths[c] > T for c in nexts)
        if prefix and set(classes) <= set(prefix) and (overflow or not terminal_only):
            out.append(tuple(prefix))
        for c in nexts:
            if used + lengths[c] <= T:
                extend(prefix + [c], used + lengths[c])

    extend([], 0.0)
    return out
