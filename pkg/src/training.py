import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.data.dataset import Dataset, Video
from src.engine.checkpoint import Checkpoint, save_checkpoint
from src.engine.hmm import HmmParams, estimate_from_labels, estimate_static, update_dynamic
from src.engine.nnet import (
    NetworkGrads,
    NetworkParams,
    backward,
    ce_loss_and_grad,
    forward,
    init_params,
    npair_loss_and_grad,
    sgd_step,
    total_loss,
)
from src.engine.scv import scv_decode
from src.errors import NonFiniteError, TrainingError
from src.models.assignment_bank import MapAssignmentBank
from src.models.report import IterationRecord
from src.models.train_config import TrainConfig

logger = logging.getLogger(__name__)

PROGRESS_EVERY = 100


def sharing_pairs(dataset: Dataset) -> List[Tuple[int, int]]:
    """Index pairs (i < j) of videos whose ground-truth sets intersect."""
    pairs = [
        (i, j)
        for i, j in itertools.combinations(range(len(dataset)), 2)
        if dataset.videos[i].action_set & dataset.videos[j].action_set
    ]
    if not pairs:
        logger.error(f"None of the {len(dataset)} training videos share an action")
        raise TrainingError("Training needs at least one pair of videos sharing an action")
    return pairs


def sample_pair(
    dataset: Dataset, rng: np.random.Generator, pairs: Optional[Sequence[Tuple[int, int]]] = None
) -> Tuple[Video, Video]:
    if pairs is None:
        pairs = sharing_pairs(dataset)
    i, j = pairs[int(rng.integers(len(pairs)))]
    return dataset.videos[i], dataset.videos[j]


@dataclass
class TrainState:
    params: NetworkParams
    hmm: HmmParams
    static_hmm: HmmParams
    bank: MapAssignmentBank
    rng: np.random.Generator
    iteration: int = 0

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(network=self.params, hmm=self.hmm)


class TrainLog:
    """Line-delimited JSON log, one IterationRecord per line."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records = 0
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def record(self, record: IterationRecord):
        self.records += 1
        if self.path is None:
            return
        with open(self.path, "a") as f:
            f.write(record.model_dump_json() + "\n")


def _initial_hmm(dataset: Dataset, config: TrainConfig) -> HmmParams:
    if config.hmm_variant != "ground_truth":
        return estimate_static(dataset.sets(), dataset.lengths(), dataset.n_classes, l_min=config.l_min)
    unlabeled = [v.video_id for v in dataset if v.labels is None]
    if unlabeled:
        logger.error(f"Ground-truth HMM requested but {len(unlabeled)} videos lack framewise labels")
        raise TrainingError(f"No framewise labels for videos {unlabeled[:5]}")
    return estimate_from_labels([v.ground_truth() for v in dataset], dataset.n_classes, l_min=config.l_min)


def init_state(dataset: Dataset, config: TrainConfig) -> TrainState:
    """Fresh network, initial HMM and a bank filled by decoding every video once.

    The ground-truth variant estimates the HMM from framewise labels and keeps
    it fixed.
    """
    params = init_params(dataset.d, dataset.n_classes, n_h=config.hidden_units, seed=config.seed)
    initial = _initial_hmm(dataset, config)
    bank = MapAssignmentBank({v.video_id: v.action_set for v in dataset}, dataset.n_classes)
    for video in dataset:
        cache = forward(params, video.features)
        bank.insert(video.video_id, scv_decode(cache, initial, video.action_set, prune=config.prune))
    logger.info(f"Initialized bank: {bank.get_cache_data()}")
    return TrainState(
        params=params,
        hmm=initial,
        static_hmm=initial,
        bank=bank,
        rng=np.random.default_rng(config.seed),
    )


def _diagnostic(state: TrainState, pair, ce: float, np_loss: float) -> str:
    norms = {name: float(np.linalg.norm(getattr(state.params, name))) for name in ("W1", "b1", "W2", "b2")}
    return (
        f"iteration={state.iteration} videos={[v.video_id for v in pair]} ce={ce} npair={np_loss} "
        f"param_norms={norms} lambda={state.hmm.lengths.tolist()}"
    )


def train_iteration(state: TrainState, pair: Tuple[Video, Video], config: TrainConfig) -> IterationRecord:
    """One SCV pseudo-labeling and SGD step on a pair of videos; mutates the state."""
    weight = config.loss_weight
    caches = [forward(state.params, video.features) for video in pair]
    history = []
    segs = [
        scv_decode(cache, state.hmm, video.action_set, prune=config.prune, history=history)
        for cache, video in zip(caches, pair)
    ]
    labels = [seg.labels() for seg in segs]

    ce = 0.0
    grad_f = []
    for cache, lab in zip(caches, labels):
        loss, grad = ce_loss_and_grad(cache, lab)
        ce += loss
        grad_f.append(grad)
    if config.frame_normalized:
        frames = sum(video.T for video in pair)
        ce /= frames
        grad_f = [g / frames for g in grad_f]

    np_loss = 0.0
    grad_h = [None, None]
    if config.regularizer != "none":
        result = npair_loss_and_grad(
            caches,
            [video.action_set for video in pair],
            labels,
            mode=config.feature_mode,
            base=config.regularizer == "base",
        )
        np_loss = result.loss
        grad_f = [weight * gf + (1.0 - weight) * rf for gf, rf in zip(grad_f, result.grad_f)]
        grad_h = [(1.0 - weight) * rh for rh in result.grad_h]
    else:
        grad_f = [weight * gf for gf in grad_f]

    loss = total_loss(ce, np_loss, weight)
    if not np.isfinite(loss):
        logger.error(f"Non-finite loss: {_diagnostic(state, pair, ce, np_loss)}")
        raise NonFiniteError(f"Non-finite loss at iteration {state.iteration}")

    grads = NetworkGrads.zeros_like(state.params)
    for cache, gf, gh in zip(caches, grad_f, grad_h):
        grads += backward(state.params, cache, gf, gh)
    lr = config.lr_at(state.iteration)
    try:
        state.params = sgd_step(state.params, grads, lr)
    except NonFiniteError:
        logger.error(f"Non-finite gradient: {_diagnostic(state, pair, ce, np_loss)}")
        raise

    for video, seg in zip(pair, segs):
        state.bank.insert(video.video_id, seg)
    state.iteration += 1

    if config.hmm_variant == "dynamic":
        if state.iteration % config.refresh_interval == 0:
            drift = state.bank.recount()
            logger.info(f"Recounted bank at iteration {state.iteration}, drift {drift:.3g}")
        state.hmm = update_dynamic(state.bank, state.static_hmm)

    return IterationRecord(
        iteration=state.iteration,
        ce=ce,
        npair=np_loss,
        loss=float(loss),
        lr=lr,
        flips=len(history),
        videos=[video.video_id for video in pair],
    )


def fit(dataset: Dataset, config: TrainConfig, log_path=None, checkpoint_path=None) -> Checkpoint:
    """Train for config.iterations and return the final checkpoint."""
    pairs = sharing_pairs(dataset)
    state = init_state(dataset, config)
    log = TrainLog(log_path)
    logger.info(
        f"Training {config.iterations} iterations on {len(dataset)} videos "
        f"({len(pairs)} sharing pairs, {config.hmm_variant} HMM, {config.regularizer} regularizer)"
    )

    for _ in range(config.iterations):
        pair = sample_pair(dataset, state.rng, pairs)
        record = train_iteration(state, pair, config)
        log.record(record)
        if record.iteration % PROGRESS_EVERY == 0:
            logger.info(f"Iteration {record.iteration}: ce={record.ce:.4f} npair={record.npair:.4f} lr={record.lr}")
        if (
            checkpoint_path is not None
            and config.checkpoint_interval
            and record.iteration % config.checkpoint_interval == 0
        ):
            save_checkpoint(state.checkpoint(), checkpoint_path)

    ckpt = state.checkpoint()
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    logger.info(f"Training complete after {state.iteration} iterations")
    return ckpt
