import logging
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.spatial.distance import pdist

from src.data.dataset import Dataset, Video
from src.errors import DatasetError
from src.models.vocabulary import Vocabulary

logger = logging.getLogger(__name__)

MAX_VIDEO_DRAWS = 1000


class SynthSpec(BaseModel):
    n_classes: int = Field(6, ge=1)
    dim: int = Field(16, ge=1)
    sigma: float = Field(1.0, ge=0.0)
    # minimum pairwise distance between class means, in units of sigma
    separation: float = Field(4.0, gt=0.0)
    means: Optional[List[List[float]]] = None
    mean_lengths: Union[float, List[float]] = 30.0
    set_size: Tuple[int, int] = (2, 4)
    video_length: Optional[Tuple[int, int]] = None
    repeat_prob: float = Field(0.0, ge=0.0, lt=1.0)
    n_videos: int = Field(80, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_feasible(self):
        lo, hi = self.set_size
        if not 1 <= lo <= hi <= self.n_classes:
            raise ValueError(f"set_size {self.set_size} must satisfy 1 <= min <= max <= n_classes")
        if self.video_length is not None:
            t_lo, t_hi = self.video_length
            if t_lo > t_hi or t_hi < lo:
                raise ValueError(f"video_length {self.video_length} cannot hold sets of size {lo}")
        lengths = self.class_mean_lengths()
        if len(lengths) != self.n_classes or min(lengths) <= 0:
            raise ValueError("mean_lengths needs one positive value per class")
        if self.means is not None:
            means = np.asarray(self.means, dtype=np.float64)
            if means.shape != (self.n_classes, self.dim):
                raise ValueError(f"means must have shape ({self.n_classes}, {self.dim})")
            if self.n_classes > 1 and pdist(means).min() == 0.0:
                raise ValueError("class means must be distinct")
        return self

    def class_mean_lengths(self) -> List[float]:
        if isinstance(self.mean_lengths, (int, float)):
            return [float(self.mean_lengths)] * self.n_classes
        return [float(v) for v in self.mean_lengths]

    def class_names(self) -> List[str]:
        return [f"action_{c}" for c in range(self.n_classes)]


def class_means(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Class means, rounded to float32 like the stored features."""
    if spec.means is not None:
        means = np.asarray(spec.means, dtype=np.float64)
    else:
        means = rng.normal(size=(spec.n_classes, spec.dim))
        if spec.n_classes > 1:
            means *= max(spec.sigma, 1.0) * spec.separation / pdist(means).min()
    return means.astype(np.float32).astype(np.float64)


def _sample_ordering(classes: np.ndarray, repeat_prob: float, rng: np.random.Generator) -> List[int]:
    order = [int(c) for c in rng.permutation(classes)]
    while len(classes) > 1 and rng.random() < repeat_prob:
        choices = [int(c) for c in classes if c != order[-1]]
        order.append(choices[int(rng.integers(len(choices)))])
    return order


def _sample_video(spec: SynthSpec, means: np.ndarray, rng: np.random.Generator):
    lo, hi = spec.set_size
    mean_lengths = spec.class_mean_lengths()
    for _ in range(MAX_VIDEO_DRAWS):
        size = int(rng.integers(lo, hi + 1))
        action_set = np.sort(rng.choice(spec.n_classes, size=size, replace=False))
        order = _sample_ordering(action_set, spec.repeat_prob, rng)
        lengths = [max(1, int(rng.poisson(mean_lengths[c]))) for c in order]
        T = sum(lengths)
        if spec.video_length is None or spec.video_length[0] <= T <= spec.video_length[1]:
            labels = np.repeat(np.array(order, dtype=np.int64), lengths)
            noise = rng.normal(size=(spec.dim, T)) * spec.sigma
            features = (means[labels].T + noise).astype(np.float32).astype(np.float64)
            return frozenset(int(c) for c in action_set), labels, features
    raise DatasetError(
        f"Could not draw a video with length in {spec.video_length} after {MAX_VIDEO_DRAWS} tries"
    )


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Videos whose frames are class mean + Gaussian noise, with framewise ground truth."""
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec, rng)
    videos = []
    for i in range(spec.n_videos):
        action_set, labels, features = _sample_video(spec, means, rng)
        videos.append(Video(video_id=f"video_{i:04d}", features=features, action_set=action_set, labels=labels))
    logger.info(f"Generated {len(videos)} synthetic videos over {spec.n_classes} classes")
    return Dataset(Vocabulary(classes=spec.class_names()), videos)


def split_dataset(dataset: Dataset, n_test: int) -> Tuple[Dataset, Dataset]:
    if not 0 <= n_test < len(dataset):
        raise DatasetError(f"Cannot hold out {n_test} of {len(dataset)} videos")
    cut = len(dataset) - n_test
    return (
        Dataset(dataset.vocabulary, dataset.videos[:cut]),
        Dataset(dataset.vocabulary, dataset.videos[cut:]),
    )
