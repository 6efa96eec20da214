"""End-to-end runs on synthetic data; minutes each."""
import numpy as np
import pytest

from src.data.synth import SynthSpec, generate_synthetic, split_dataset
from src.engine.infer import GrammarPool, mc_align, mc_segment
from src.engine.nnet import forward
from src.evaluation.metrics import evaluate
from src.models.train_config import TrainConfig
from src.training import fit

pytestmark = pytest.mark.slow


def synthetic_split(seed):
    spec = SynthSpec(
        n_classes=6,
        dim=16,
        sigma=1.0,
        separation=4.0,
        mean_lengths=[15.0, 20.0, 25.0, 30.0, 20.0, 25.0],
        set_size=(2, 4),
        video_length=(60, 120),
        n_videos=80,
        seed=seed,
    )
    return split_dataset(generate_synthetic(spec), 20)


def train(dataset, name="SCV", seed=0, iterations=2000):
    config = TrainConfig.ablation(
        name,
        iterations=iterations,
        learning_rate=0.05,
        lr_decay_iteration=1500,
        lr_decayed=0.01,
        hidden_units=32,
        l_min=3,
        refresh_interval=200,
        frame_normalized=True,
        seed=seed,
    )
    return fit(dataset, config)


def segment_all(ckpt, train_set, test_set, seed=0, K=100):
    rng = np.random.default_rng(seed)
    pool = GrammarPool(train_set.sets())
    return {
        v.video_id: mc_segment(forward(ckpt.network, v.features), ckpt.hmm, pool, K=K, rng=rng).segmentation
        for v in test_set
    }


def truth_of(dataset):
    return {v.video_id: v.ground_truth() for v in dataset}


def test_synthetic_segmentation_and_alignment():
    train_set, test_set = synthetic_split(seed=0)
    ckpt = train(train_set)

    report = evaluate("mof", segment_all(ckpt, train_set, test_set), truth_of(test_set))
    assert report.aggregate >= 0.8

    rng = np.random.default_rng(1)
    aligned = {
        v.video_id: mc_align(forward(ckpt.network, v.features), ckpt.hmm, v.action_set, K=100, rng=rng).segmentation
        for v in test_set
    }
    assert evaluate("iod", aligned, truth_of(test_set)).aggregate >= 0.85


def test_regularized_dynamic_training_is_not_worse():
    scores = {name: [] for name in ("SCV", "SCVnoreg", "SCVstatic")}
    for seed in range(5):
        train_set, test_set = synthetic_split(seed=100 + seed)
        for name in scores:
            ckpt = train(train_set, name=name, seed=seed, iterations=2000)
            predictions = segment_all(ckpt, train_set, test_set, seed=seed, K=1000)
            scores[name].append(evaluate("mof", predictions, truth_of(test_set)).aggregate)
    full = np.median(scores["SCV"])
    assert full >= np.median(scores["SCVnoreg"]) - 0.02
    assert full >= np.median(scores["SCVstatic"]) - 0.02
