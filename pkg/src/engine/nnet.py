import logging
from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from src.config import HIDDEN_UNITS, LOSS_WEIGHT
from src.errors import ContractViolation, NonFiniteError, VocabularyError

logger = logging.getLogger(__name__)

FeatureMode = Literal["hard", "soft"]


@dataclass(frozen=True)
class NetworkParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        n_h, d = self.W1.shape
        n_classes = self.W2.shape[0]
        if n_h < 1 or self.b1.shape != (n_h,) or self.W2.shape != (n_classes, n_h) or self.b2.shape != (n_classes,):
            raise ContractViolation(
                f"Inconsistent network shapes W1={self.W1.shape} b1={self.b1.shape} "
                f"W2={self.W2.shape} b2={self.b2.shape}"
            )
        if not all(np.isfinite(a).all() for a in (self.W1, self.b1, self.W2, self.b2)):
            raise NonFiniteError("Network parameters contain non-finite entries")

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def n_h(self) -> int:
        return self.W1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]


def init_params(d: int, n_classes: int, n_h: int = HIDDEN_UNITS, seed: int = 0) -> NetworkParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / np.sqrt(d)
    bound2 = 1.0 / np.sqrt(n_h)
    return NetworkParams(
        W1=rng.uniform(-bound1, bound1, size=(n_h, d)),
        b1=rng.uniform(-bound1, bound1, size=n_h),
        W2=rng.uniform(-bound2, bound2, size=(n_classes, n_h)),
        b2=rng.uniform(-bound2, bound2, size=n_classes),
    )


@dataclass(frozen=True)
class ForwardCache:
    x: np.ndarray
    h: np.ndarray
    f: np.ndarray
    softmax: np.ndarray
    log_softmax: np.ndarray

    @property
    def T(self) -> int:
        return self.f.shape[1]

    @property
    def n_classes(self) -> int:
        return self.f.shape[0]


@dataclass(frozen=True)
class ClassFeature:
    class_id: int
    vector: np.ndarray
    mode: FeatureMode


@dataclass
class NetworkGrads:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "NetworkGrads":
        return cls(
            W1=np.zeros_like(params.W1),
            b1=np.zeros_like(params.b1),
            W2=np.zeros_like(params.W2),
            b2=np.zeros_like(params.b2),
        )

    def __iadd__(self, other: "NetworkGrads"):
        self.W1 += other.W1
        self.b1 += other.b1
        self.W2 += other.W2
        self.b2 += other.b2
        return self

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.W1, self.b1, self.W2, self.b2))


@dataclass
class NPairResult:
    loss: float
    grad_h: List[np.ndarray]
    grad_f: List[np.ndarray]
    terms: int = 0


def _check_labels(labels, T: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (T,):
        raise ContractViolation(f"Expected {T} pseudo-labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise VocabularyError(f"Pseudo-label outside vocabulary of size {n_classes}")
    return labels


def forward(params: NetworkParams, x: np.ndarray) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != params.d:
        raise ContractViolation(f"Features of shape {x.shape} do not match input dimension {params.d}")
    h = np.maximum(0.0, params.W1 @ x + params.b1[:, None])
    f = params.W2 @ h + params.b2[:, None]
    return ForwardCache(
        x=x,
        h=h,
        f=f,
        softmax=softmax(f, axis=0),
        log_softmax=log_softmax(f, axis=0),
    )


def ce_loss_and_grad(cache: ForwardCache, pseudo_labels) -> tuple[float, np.ndarray]:
    labels = _check_labels(pseudo_labels, cache.T, cache.n_classes)
    frames = np.arange(cache.T)
    loss = -float(cache.log_softmax[labels, frames].sum())
    grad = cache.softmax.copy()
    grad[labels, frames] -= 1.0
    return loss, grad


def _feature_weights(cache: ForwardCache, labels: Optional[np.ndarray], class_id: int, mode: FeatureMode):
    if mode == "soft":
        return cache.softmax[class_id]
    mask = labels == class_id
    count = int(mask.sum())
    if count == 0:
        return None
    return mask / count


def class_features(
    cache: ForwardCache,
    pseudo_labels=None,
    mode: FeatureMode = "hard",
    classes: Optional[Iterable[int]] = None,
) -> List[ClassFeature]:
    if mode not in ("hard", "soft"):
        raise ContractViolation(f"Unknown feature mode: {mode}")
    labels = None
    if mode == "hard":
        if pseudo_labels is None:
            raise ContractViolation("Hard class features need pseudo-labels")
        labels = _check_labels(pseudo_labels, cache.T, cache.n_classes)
    wanted = range(cache.n_classes) if classes is None else sorted(set(classes))

    features = []
    for class_id in wanted:
        weights = _feature_weights(cache, labels, class_id, mode)
        if weights is None:
            continue
        features.append(ClassFeature(class_id=class_id, vector=cache.h @ weights, mode=mode))
    return features


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        logger.warning("Zero class feature in cosine distance; using distance 1")
        return 1.0
    return float(1.0 - (u @ v) / (nu * nv))


def _cosine_distance_grads(u: np.ndarray, v: np.ndarray):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return np.zeros_like(u), np.zeros_like(v)
    sim = (u @ v) / (nu * nv)
    du = -(v / (nu * nv) - sim * u / nu**2)
    dv = -(u / (nu * nv) - sim * v / nv**2)
    return du, dv


def npair_loss_and_grad(
    caches: Sequence[ForwardCache],
    sets: Sequence[Iterable[int]],
    pseudo_labels: Sequence = (None, None),
    mode: FeatureMode = "hard",
    base: bool = False,
) -> NPairResult:
    """N-pair regularizer between two videos sharing classes.

    ``caches``, ``sets`` and ``pseudo_labels`` are pairs (v, v'). With
    ``base`` the non-shared distances are held at 0 (baseline regularizer).
    Gradients are returned per video w.r.t. h and, in soft mode, f.
    """
    if len(caches) != 2 or len(sets) != 2:
        raise ContractViolation("N-pair loss takes exactly two videos")
    if mode not in ("hard", "soft"):
        raise ContractViolation(f"Unknown feature mode: {mode}")
    set_v, set_w = frozenset(sets[0]), frozenset(sets[1])
    shared = sorted(set_v & set_w)
    grad_h = [np.zeros_like(c.h) for c in caches]
    grad_f = [np.zeros_like(c.f) for c in caches]
    if not shared:
        return NPairResult(loss=0.0, grad_h=grad_h, grad_f=grad_f)

    labels = [None, None]
    if mode == "hard":
        labels = [_check_labels(pseudo_labels[k], caches[k].T, caches[k].n_classes) for k in range(2)]

    weights = [{}, {}]
    feats = [{}, {}]
    for k, classes in enumerate((set_v, set_w)):
        for class_id in sorted(classes):
            w = _feature_weights(caches[k], labels[k], class_id, mode)
            if w is not None:
                weights[k][class_id] = w
                feats[k][class_id] = caches[k].h @ w

    active = [c for c in shared if c in feats[0] and c in feats[1]]
    if not active:
        return NPairResult(loss=0.0, grad_h=grad_h, grad_f=grad_f)
    only_v = [a for a in sorted(set_v - set_w) if a in feats[0]]
    only_w = [b for b in sorted(set_w - set_v) if b in feats[1]]
    scale = 1.0 / len(active)

    feat_grads = [{c: np.zeros(caches[k].h.shape[0]) for c in feats[k]} for k in range(2)]
    loss = 0.0
    for c in active:
        d_cc = cosine_distance(feats[0][c], feats[1][c])
        # (distance, video of the non-shared feature, its class)
        others = [(a, 0) for a in only_v] + [(b, 1) for b in only_w]
        exps = []
        for other, k in others:
            if base:
                d_other = 0.0
            elif k == 0:
                d_other = cosine_distance(feats[0][other], feats[1][c])
            else:
                d_other = cosine_distance(feats[0][c], feats[1][other])
            exps.append(np.exp(d_cc - d_other))
        total = 1.0 + float(sum(exps))
        loss += scale * np.log(total)

        g_cc = scale * (total - 1.0) / total
        du, dv = _cosine_distance_grads(feats[0][c], feats[1][c])
        feat_grads[0][c] += g_cc * du
        feat_grads[1][c] += g_cc * dv
        if base:
            continue
        for (other, k), e in zip(others, exps):
            g_other = -scale * e / total
            if k == 0:
                du, dv = _cosine_distance_grads(feats[0][other], feats[1][c])
                feat_grads[0][other] += g_other * du
                feat_grads[1][c] += g_other * dv
            else:
                du, dv = _cosine_distance_grads(feats[0][c], feats[1][other])
                feat_grads[0][c] += g_other * du
                feat_grads[1][other] += g_other * dv

    for k in range(2):
        cache = caches[k]
        grad_p = np.zeros_like(cache.f)
        for class_id, g in feat_grads[k].items():
            grad_h[k] += np.outer(g, weights[k][class_id])
            if mode == "soft":
                grad_p[class_id] = g @ cache.h
        if mode == "soft":
            s = cache.softmax
            grad_f[k] = s * (grad_p - (s * grad_p).sum(axis=0, keepdims=True))

    return NPairResult(loss=float(loss), grad_h=grad_h, grad_f=grad_f, terms=len(active))


def total_loss(ce: float, np_loss: float, weight: float = LOSS_WEIGHT) -> float:
    if not 0.0 <= weight <= 1.0:
        raise ContractViolation(f"Loss weight must lie in [0, 1], got {weight}")
    return weight * ce + (1.0 - weight) * np_loss


def backward(params: NetworkParams, cache: ForwardCache, grad_f: np.ndarray, grad_h: Optional[np.ndarray] = None) -> NetworkGrads:
    """Backpropagate gradients on f (and optionally h) into the weights."""
    dW2 = grad_f @ cache.h.T
    db2 = grad_f.sum(axis=1)
    dh = params.W2.T @ grad_f
    if grad_h is not None:
        dh = dh + grad_h
    dz = dh * (cache.h > 0)
    dW1 = dz @ cache.x.T
    db1 = dz.sum(axis=1)
    return NetworkGrads(W1=dW1, b1=db1, W2=dW2, b2=db2)


def sgd_step(params: NetworkParams, grads: NetworkGrads, lr: float) -> NetworkParams:
    if lr <= 0:
        raise ContractViolation(f"Learning rate must be positive, got {lr}")
    if not grads.is_finite():
        logger.error("Non-finite gradient, aborting update")
        raise NonFiniteError("Non-finite gradients in SGD step")
    return NetworkParams(
        W1=params.W1 - lr * grads.W1,
        b1=params.b1 - lr * grads.b1,
        W2=params.W2 - lr * grads.W2,
        b2=params.b2 - lr * grads.b2,
    )
