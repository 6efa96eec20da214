import numpy as np
import pytest
from scipy.special import log_softmax, softmax

from src.data.dataset import Dataset, Video
from src.engine.hmm import HmmParams, _normalize_rows
from src.engine.nnet import ForwardCache
from src.models.vocabulary import Vocabulary


def cache_from_scores(f: np.ndarray, h: np.ndarray = None, rng: np.random.Generator = None) -> ForwardCache:
    f = np.asarray(f, dtype=np.float64)
    if h is None:
        rng = rng or np.random.default_rng(0)
        h = np.abs(rng.normal(size=(4, f.shape[1])))
    return ForwardCache(
        x=np.zeros((1, f.shape[1])),
        h=h,
        f=f,
        softmax=softmax(f, axis=0),
        log_softmax=log_softmax(f, axis=0),
    )


def random_hmm(rng: np.random.Generator, n_classes: int, low: float = 1.5, high: float = 5.0) -> HmmParams:
    return HmmParams(
        log_transitions=_normalize_rows(rng.uniform(0.1, 1.0, size=(n_classes, n_classes))),
        lengths=rng.uniform(low, high, size=n_classes),
        log_priors=np.log(rng.dirichlet(np.ones(n_classes))),
        l_min=1,
    )


def uniform_hmm(n_classes: int, length: float) -> HmmParams:
    return HmmParams(
        log_transitions=_normalize_rows(np.ones((n_classes, n_classes))),
        lengths=np.full(n_classes, float(length)),
        log_priors=np.full(n_classes, -np.log(n_classes)),
        l_min=1,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_cache():
    return cache_from_scores


@pytest.fixture
def make_hmm():
    return random_hmm


@pytest.fixture
def flat_hmm():
    return uniform_hmm


@pytest.fixture
def tiny_dataset():
    """Three videos over classes a, b, c built from framewise labels."""
    vocab = Vocabulary(classes=["a", "b", "c"])
    rng = np.random.default_rng(7)
    means = np.eye(3) * 5.0
    videos = []
    for video_id, labels in (
        ("v0", [0] * 6 + [1] * 6),
        ("v1", [1] * 5 + [2] * 7),
        ("v2", [2] * 4 + [0] * 8),
    ):
        labels = np.array(labels)
        features = means[labels].T + 0.1 * rng.normal(size=(3, len(labels)))
        videos.append(Video(video_id=video_id, features=features, action_set=frozenset(labels.tolist()), labels=labels))
    return Dataset(vocab, videos)
