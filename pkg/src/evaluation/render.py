import logging
from pathlib import Path
from typing import Mapping, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from src.models.segmentation import Segmentation
from src.models.vocabulary import Vocabulary

logger = logging.getLogger(__name__)


def class_colors(vocabulary: Vocabulary):
    cmap = plt.get_cmap("tab20")
    colors = [cmap(c % cmap.N) for c in range(len(vocabulary))]
    if vocabulary.background_id is not None:
        colors[vocabulary.background_id] = (1.0, 1.0, 1.0, 1.0)
    return colors


def render_strip(
    path,
    predicted: Segmentation,
    vocabulary: Vocabulary,
    truth: Optional[Segmentation] = None,
    title: Optional[str] = None,
) -> Path:
    """Write a horizontal color strip of a segmentation (ground truth below, if given)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    colors = class_colors(vocabulary)
    rows = [("predicted", predicted)] + ([("ground truth", truth)] if truth is not None else [])

    fig, ax = plt.subplots(figsize=(10, 0.6 + 0.5 * len(rows)))
    for row, (_, seg) in enumerate(rows):
        bars = [(start, end - start + 1) for _, start, end in seg.intervals()]
        ax.broken_barh(bars, (row, 0.8), facecolors=[colors[c] for c in seg.classes], edgecolor="black", linewidth=0.3)
    ax.set_xlim(0, predicted.T)
    ax.set_ylim(-0.1, len(rows))
    ax.set_yticks([row + 0.4 for row in range(len(rows))])
    ax.set_yticklabels([name for name, _ in rows])
    ax.set_xlabel("frame")
    used = sorted(set(predicted.classes) | (set(truth.classes) if truth is not None else set()))
    handles = [plt.Rectangle((0, 0), 1, 1, facecolor=colors[c], edgecolor="black") for c in used]
    ax.legend(handles, [vocabulary.name_of(c) for c in used], loc="upper left", bbox_to_anchor=(1.0, 1.0), fontsize=7)
    if title:
        ax.set_title(title)
    plt.tight_layout()
    plt.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def render_predictions(
    out_dir,
    predictions: Mapping[str, Segmentation],
    vocabulary: Vocabulary,
    truth: Optional[Mapping[str, Segmentation]] = None,
) -> list:
    out_dir = Path(out_dir)
    written = []
    for video_id in sorted(predictions):
        gt = truth.get(video_id) if truth is not None else None
        written.append(render_strip(out_dir / f"{video_id}.png", predictions[video_id], vocabulary, gt, title=video_id))
    logger.info(f"Rendered {len(written)} segmentation strips to {out_dir}")
    return written
