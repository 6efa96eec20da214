import logging
from dataclasses import dataclass, replace
from typing import Iterable, Literal, Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import lstsq
from scipy.special import gammaln

from src.config import L_MIN, SMOOTHING
from src.errors import ContractViolation
from src.models.assignment_bank import BankCounts, MapAssignmentBank
from src.models.segmentation import Segmentation

logger = logging.getLogger(__name__)

HmmVariant = Literal["static", "dynamic", "ground_truth"]

# prior given to classes that never appear in any training set
UNSEEN_PRIOR = 1e-6


@dataclass(frozen=True)
class HmmParams:
    """HMM parameters; probabilities are stored as logs.

    log_transitions[c, c'] is log p(c'|c); the diagonal is -inf because a
    segment is never followed by one of its own class.
    """

    log_transitions: np.ndarray
    lengths: np.ndarray
    log_priors: np.ndarray
    l_min: int
    variant: HmmVariant = "static"

    def __post_init__(self):
        k = self.lengths.shape[0]
        if self.log_transitions.shape != (k, k) or self.log_priors.shape != (k,):
            raise ContractViolation("HMM parameter shapes are inconsistent")
        if self.l_min < 1:
            raise ContractViolation(f"l_min must be a positive integer, got {self.l_min}")
        if not (self.lengths > 0).all():
            raise ContractViolation("Poisson means must be positive")

    @property
    def n_classes(self) -> int:
        return self.lengths.shape[0]

    @property
    def transitions(self) -> np.ndarray:
        return np.exp(self.log_transitions)

    @property
    def priors(self) -> np.ndarray:
        return np.exp(self.log_priors)

    def poisson_table(self, max_length: int) -> np.ndarray:
        """log Poisson pmf of lengths 0..max_length for every class, shape (K, max_length+1)."""
        return poisson_log_table(self.lengths, max_length)

    def sequence_transition_score(self, classes: Sequence[int]) -> float:
        return float(sum(self.log_transitions[a, b] for a, b in zip(classes[:-1], classes[1:])))


def poisson_log_pmf(l: int, lam: float) -> float:
    if l <= 0:
        raise ContractViolation(f"Segment length must be >= 1, got {l}")
    if lam <= 0:
        raise ContractViolation(f"Poisson mean must be positive, got {lam}")
    return float(l * np.log(lam) - lam - gammaln(l + 1))


def poisson_log_table(lengths: np.ndarray, max_length: int) -> np.ndarray:
    l = np.arange(max_length + 1, dtype=np.float64)
    lam = np.asarray(lengths, dtype=np.float64)[:, None]
    return l[None, :] * np.log(lam) - lam - gammaln(l + 1)[None, :]


def _normalize_rows(counts: np.ndarray) -> np.ndarray:
    """Row-normalize off-diagonal counts into log-probabilities; empty rows become uniform."""
    k = counts.shape[0]
    counts = counts.astype(np.float64).copy()
    np.fill_diagonal(counts, 0.0)
    off_diagonal = ~np.eye(k, dtype=bool)
    totals = counts.sum(axis=1)
    empty = totals <= 0
    counts[empty] = off_diagonal[empty].astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 0.0)
        log_probs = np.log(probs)
    log_probs[~off_diagonal] = -np.inf
    return log_probs


def solve_mean_lengths(
    sets: Sequence[Iterable[int]], video_lengths: Sequence[int], n_classes: int, l_min: int
) -> np.ndarray:
    """Least-squares Poisson means so that each video's set sums to its length.

    Minimizes sum_v (sum_{c in C_v} lam_c - T_v)^2 with lam_c >= l_min; classes
    never observed get l_min.
    """
    sets = [sorted(set(s)) for s in sets]
    observed = sorted(set().union(*sets)) if sets else []
    lam = np.full(n_classes, float(l_min))
    if not observed:
        return lam
    column = {c: j for j, c in enumerate(observed)}
    A = np.zeros((len(sets), len(observed)))
    for v, classes in enumerate(sets):
        A[v, [column[c] for c in classes]] = 1.0
    target = np.asarray(video_lengths, dtype=np.float64)

    solution = lstsq(A, target)[0]
    clamped = solution < l_min
    if clamped.any() and not clamped.all():
        free = ~clamped
        residual = target - A[:, clamped].sum(axis=1) * l_min
        solution = np.full(len(observed), float(l_min))
        solution[free] = lstsq(A[:, free], residual)[0]
    solution = np.maximum(solution, float(l_min))
    lam[observed] = solution
    return lam


def estimate_static(
    sets: Sequence[Iterable[int]],
    video_lengths: Sequence[int],
    n_classes: int,
    l_min: int = L_MIN,
) -> HmmParams:
    if len(sets) != len(video_lengths):
        raise ContractViolation("Need one length per ground-truth set")
    sets = [frozenset(s) for s in sets]
    for s, T in zip(sets, video_lengths):
        if not s or T <= 0:
            raise ContractViolation("Every training video needs a nonempty set and T > 0")
        if max(s) >= n_classes or min(s) < 0:
            raise ContractViolation(f"Set {sorted(s)} outside vocabulary of size {n_classes}")

    co_occurrence = np.zeros((n_classes, n_classes))
    footage = np.zeros(n_classes)
    for s, T in zip(sets, video_lengths):
        members = sorted(s)
        co_occurrence[np.ix_(members, members)] += 1.0
        footage[members] += T
    log_transitions = _normalize_rows(co_occurrence)

    lengths = solve_mean_lengths(sets, video_lengths, n_classes, l_min)
    priors = footage / float(sum(video_lengths))
    unseen = footage == 0
    if unseen.any():
        logger.warning(f"Classes never observed in training sets: {np.flatnonzero(unseen).tolist()}")
        priors[unseen] = UNSEEN_PRIOR
    return HmmParams(
        log_transitions=log_transitions,
        lengths=lengths,
        log_priors=np.log(priors),
        l_min=l_min,
        variant="static",
    )


def dynamic_from_counts(counts: BankCounts, fallback: HmmParams, eps: float = SMOOTHING) -> HmmParams:
    k = fallback.n_classes
    predicted = counts.segments > 0

    pair_counts = counts.pairs + eps
    log_transitions = _normalize_rows(pair_counts)
    log_transitions[~predicted] = fallback.log_transitions[~predicted]

    lengths = fallback.lengths.copy()
    lengths[predicted] = counts.frames[predicted] / counts.segments[predicted]

    priors = (counts.frames + eps) / (counts.total_frames + eps * k)
    return HmmParams(
        log_transitions=log_transitions,
        lengths=lengths,
        log_priors=np.log(priors),
        l_min=fallback.l_min,
        variant="dynamic",
    )


def update_dynamic(
    bank: MapAssignmentBank,
    fallback: HmmParams,
    video_lengths: Optional[Mapping[str, int]] = None,
    eps: float = SMOOTHING,
) -> HmmParams:
    """Re-estimate the dynamic HMM from the bank's latest MAP assignments.

    Classes the bank never predicts keep the fallback (static) length and
    transition row.
    """
    if video_lengths is not None:
        for video_id, T in video_lengths.items():
            seg = bank.get(video_id)
            if seg is None:
                raise ContractViolation(f"Bank has no assignment for video {video_id}")
            if seg.T != T:
                raise ContractViolation(f"Assignment of {video_id} covers {seg.T} frames, video has {T}")
    return dynamic_from_counts(bank.counts, fallback, eps)


def estimate_from_labels(
    segmentations: Sequence[Segmentation], n_classes: int, l_min: int = L_MIN, eps: float = SMOOTHING
) -> HmmParams:
    """HMM estimated from framewise ground truth (upper-bound baseline)."""
    counts = BankCounts.from_segmentations(segmentations, n_classes)
    fallback = HmmParams(
        log_transitions=_normalize_rows(np.zeros((n_classes, n_classes))),
        lengths=np.full(n_classes, float(l_min)),
        log_priors=np.full(n_classes, np.log(UNSEEN_PRIOR)),
        l_min=l_min,
    )
    return replace(dynamic_from_counts(counts, fallback, eps), variant="ground_truth")
