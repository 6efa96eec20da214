import logging
from typing import Dict, List, Mapping, Sequence

import numpy as np

from src.errors import ContractViolation
from src.models.report import EvalReport
from src.models.segmentation import Segmentation

logger = logging.getLogger(__name__)


def _frame_hits(predicted: Sequence[np.ndarray], truth: Sequence[np.ndarray]) -> List[tuple[int, int]]:
    if len(predicted) != len(truth):
        raise ContractViolation(f"{len(predicted)} predictions for {len(truth)} ground-truth videos")
    hits = []
    for i, (p, g) in enumerate(zip(predicted, truth)):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape:
            raise ContractViolation(f"Video {i}: {p.shape[0]} predicted frames, {g.shape[0]} labeled")
        hits.append((int((p == g).sum()), int(g.size)))
    return hits


def mof(predicted: Sequence[np.ndarray], truth: Sequence[np.ndarray], per_video: bool = False) -> float:
    """Frame accuracy pooled over all frames (or averaged over videos)."""
    hits = _frame_hits(predicted, truth)
    if per_video:
        return float(np.mean([c / n for c, n in hits if n > 0]))
    total = sum(n for _, n in hits)
    return sum(c for c, _ in hits) / total if total else 0.0


def _overlap(a_start: int, a_end: int, b_start: int, b_end: int) -> int:
    return max(0, min(a_end, b_end) - max(a_start, b_start) + 1)


def iod(predicted: Segmentation, truth: Segmentation) -> float:
    """Mean over ground-truth segments of |GT ∩ D| / |D| for the best-overlapping same-class detection."""
    if not predicted.segments or not truth.segments:
        raise ContractViolation("IoD needs nonempty segmentations")
    detections = predicted.intervals()
    values = []
    for class_id, g_start, g_end in truth.intervals():
        best_overlap, best_length = 0, 1
        for d_class, d_start, d_end in detections:
            if d_class != class_id:
                continue
            overlap = _overlap(g_start, g_end, d_start, d_end)
            if overlap > best_overlap:
                best_overlap, best_length = overlap, d_end - d_start + 1
        values.append(best_overlap / best_length)
    return float(np.mean(values))


def midpoint_hits(predicted: Segmentation, truth: Segmentation) -> tuple[int, int]:
    """(correct detections, total detections); each ground-truth segment validates at most one detection."""
    if not predicted.segments or not truth.segments:
        raise ContractViolation("Midpoint hit needs nonempty segmentations")
    used = set()
    correct = 0
    gt = truth.intervals()
    for d_class, d_start, d_end in predicted.intervals():
        mid = (d_start + d_end) // 2
        for n, (g_class, g_start, g_end) in enumerate(gt):
            if n not in used and g_class == d_class and g_start <= mid <= g_end:
                used.add(n)
                correct += 1
                break
    return correct, len(predicted)


def midpoint_hit(predicted: Segmentation, truth: Segmentation) -> float:
    correct, total = midpoint_hits(predicted, truth)
    return correct / total


def evaluate(
    metric: str,
    predictions: Mapping[str, Segmentation],
    truth: Mapping[str, Segmentation],
    per_video_mof: bool = False,
) -> EvalReport:
    """Evaluate predicted against ground-truth segmentations over the shared videos.

    MoF pools frames (or averages videos), IoD averages videos, midpoint hit
    pools detections.
    """
    missing = sorted(set(truth) - set(predictions))
    if missing:
        raise ContractViolation(f"No prediction for videos {missing[:5]}")
    video_ids = sorted(truth)
    per_video: Dict[str, float] = {}

    if metric == "mof":
        preds = [predictions[v].labels() for v in video_ids]
        gts = [truth[v].labels() for v in video_ids]
        for v, p, g in zip(video_ids, preds, gts):
            per_video[v] = mof([p], [g])
        aggregate = mof(preds, gts, per_video=per_video_mof)
    elif metric == "iod":
        for v in video_ids:
            per_video[v] = iod(predictions[v], truth[v])
        aggregate = float(np.mean(list(per_video.values())))
    elif metric == "midpoint":
        correct = total = 0
        for v in video_ids:
            c, n = midpoint_hits(predictions[v], truth[v])
            per_video[v] = c / n
            correct, total = correct + c, total + n
        aggregate = correct / total
    else:
        raise ContractViolation(f"Unknown metric: {metric}")

    logger.info(f"{metric} over {len(video_ids)} videos: {aggregate:.4f}")
    return EvalReport(metric=metric, per_video=per_video, aggregate=aggregate, video_count=len(video_ids))
