import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from src.config import LOG_FORMAT, LOG_LEVEL, MC_SAMPLES
from src.data.dataset import Dataset, load_dataset, read_predictions, save_dataset, write_predictions
from src.data.synth import SynthSpec, generate_synthetic, split_dataset
from src.engine.checkpoint import Checkpoint, load_checkpoint
from src.engine.infer import GrammarPool, mc_align, mc_segment
from src.engine.nnet import forward
from src.engine.scv import scv_decode, viterbi_map
from src.errors import DatasetError, InfeasibleError, SegmentationError
from src.evaluation.metrics import evaluate
from src.evaluation.render import render_predictions
from src.models.segmentation import Segmentation
from src.models.train_config import ABLATIONS, TrainConfig
from src.training import fit

logger = logging.getLogger(__name__)


def _load_model(path: str, variant: Optional[str], dataset: Dataset) -> Checkpoint:
    ckpt = load_checkpoint(path, variant=variant)
    if ckpt.network.n_classes != dataset.n_classes or ckpt.network.d != dataset.d:
        raise DatasetError(
            f"Checkpoint expects d={ckpt.network.d}, {ckpt.network.n_classes} classes; "
            f"dataset has d={dataset.d}, {dataset.n_classes} classes"
        )
    return ckpt


def _ground_truth(dataset: Dataset) -> Dict[str, Segmentation]:
    truth = {v.video_id: v.ground_truth() for v in dataset}
    missing = sorted(video_id for video_id, seg in truth.items() if seg is None)
    if missing:
        raise DatasetError(f"No framewise labels for videos {missing[:5]}")
    return truth


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_classes=args.classes,
        dim=args.dim,
        sigma=args.sigma,
        separation=args.separation,
        mean_lengths=args.mean_length,
        set_size=(args.set_min, args.set_max),
        video_length=(args.min_length, args.max_length) if args.min_length else None,
        repeat_prob=args.repeat_prob,
        n_videos=args.videos + args.test_videos,
        seed=args.seed,
    )
    dataset = generate_synthetic(spec)
    out = Path(args.out)
    if args.test_videos:
        train, test = split_dataset(dataset, args.test_videos)
        save_dataset(train, out / "train")
        save_dataset(test, out / "test")
    else:
        save_dataset(dataset, out)
    return 0


def cmd_train(args) -> int:
    overrides = {
        key: value
        for key, value in {
            "iterations": args.iterations,
            "learning_rate": args.lr,
            "lr_decay_iteration": args.lr_decay_iteration,
            "lr_decayed": args.lr_decayed,
            "loss_weight": args.loss_weight,
            "hmm_variant": args.hmm,
            "feature_mode": args.feature_mode,
            "regularizer": args.reg,
            "hidden_units": args.hidden,
            "l_min": args.lmin,
            "checkpoint_interval": args.checkpoint_interval,
        }.items()
        if value is not None
    }
    overrides.update(seed=args.seed, prune=args.prune, frame_normalized=args.frame_normalized)
    config = TrainConfig.ablation(args.ablation, **overrides)
    dataset = load_dataset(args.data)
    fit(dataset, config, log_path=args.log, checkpoint_path=args.out)
    return 0


def cmd_segment(args) -> int:
    dataset = load_dataset(args.data)
    ckpt = _load_model(args.checkpoint, args.hmm, dataset)
    rng = np.random.default_rng(args.seed)
    pool = None
    if args.grammar == "monte-carlo":
        if not args.pool:
            raise argparse.ArgumentTypeError("--pool is required with --grammar monte-carlo")
        pool = GrammarPool(load_dataset(args.pool).sets())
    everything = range(dataset.n_classes)

    predictions = {}
    for video in dataset:
        cache = forward(ckpt.network, video.features)
        if pool is None:
            predictions[video.video_id] = viterbi_map(cache, ckpt.hmm, everything)
            continue
        try:
            result = mc_segment(cache, ckpt.hmm, pool, K=args.k, rng=rng, weighted=args.weighted)
            predictions[video.video_id] = result.segmentation
        except InfeasibleError as e:
            logger.warning(f"{video.video_id}: {e}; decoding without a grammar")
            predictions[video.video_id] = viterbi_map(cache, ckpt.hmm, everything)
    write_predictions(args.out, predictions, dataset.vocabulary)
    logger.info(f"Wrote {len(predictions)} segmentations to {args.out}")
    return 0


def cmd_align(args) -> int:
    dataset = load_dataset(args.data)
    ckpt = _load_model(args.checkpoint, args.hmm, dataset)
    rng = np.random.default_rng(args.seed)
    predictions = {}
    for video in dataset:
        cache = forward(ckpt.network, video.features)
        try:
            predictions[video.video_id] = mc_align(cache, ckpt.hmm, video.action_set, K=args.k, rng=rng).segmentation
        except InfeasibleError as e:
            logger.warning(f"{video.video_id}: {e}; falling back to set-constrained Viterbi")
            predictions[video.video_id] = scv_decode(cache, ckpt.hmm, video.action_set)
    write_predictions(args.out, predictions, dataset.vocabulary)
    logger.info(f"Wrote {len(predictions)} alignments to {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    predictions = read_predictions(args.predictions, dataset.vocabulary)
    report = evaluate(args.metric, predictions, _ground_truth(dataset), per_video_mof=args.per_video_mof)
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_render(args) -> int:
    dataset = load_dataset(args.data)
    predictions = read_predictions(args.predictions, dataset.vocabulary)
    truth = {v.video_id: v.ground_truth() for v in dataset if v.labels is not None}
    render_predictions(args.out, predictions, dataset.vocabulary, truth or None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Set-supervised temporal action segmentation.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic dataset")
    synth.add_argument("--out", required=True, help="Output dataset directory")
    synth.add_argument("--classes", type=int, default=6)
    synth.add_argument("--dim", type=int, default=16)
    synth.add_argument("--videos", type=int, default=60, help="Training videos")
    synth.add_argument("--test-videos", type=int, default=0, help="Held-out videos, written to test/")
    synth.add_argument("--sigma", type=float, default=1.0)
    synth.add_argument("--separation", type=float, default=4.0, help="Minimum mean distance in sigmas")
    synth.add_argument("--mean-length", type=float, default=30.0)
    synth.add_argument("--set-min", type=int, default=2)
    synth.add_argument("--set-max", type=int, default=4)
    synth.add_argument("--min-length", type=int, default=None)
    synth.add_argument("--max-length", type=int, default=None)
    synth.add_argument("--repeat-prob", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(handler=cmd_synth)

    train = sub.add_parser("train", help="Train a network and HMM from set supervision")
    train.add_argument("--data", required=True, help="Training dataset directory")
    train.add_argument("--out", required=True, help="Checkpoint path")
    train.add_argument("--log", default=None, help="JSON-lines iteration log")
    train.add_argument("--ablation", choices=sorted(ABLATIONS), default="SCV")
    train.add_argument("--iterations", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--lr-decay-iteration", type=int, default=None)
    train.add_argument("--lr-decayed", type=float, default=None)
    train.add_argument("--loss-weight", type=float, default=None)
    train.add_argument("--hmm", choices=["static", "dynamic", "ground_truth"], default=None)
    train.add_argument("--reg", choices=["none", "base", "npair"], default=None)
    train.add_argument("--feature-mode", choices=["hard", "soft"], default=None)
    train.add_argument("--hidden", type=int, default=None)
    train.add_argument("--lmin", type=int, default=None)
    train.add_argument("--checkpoint-interval", type=int, default=None)
    train.add_argument("--prune", action="store_true", help="Prune paths exceeding the video length")
    train.add_argument("--frame-normalized", action="store_true", help="Divide CE by the pair's frame count")
    train.add_argument("--seed", type=int, default=0)
    train.set_defaults(handler=cmd_train)

    for name, handler, text in (
        ("segment", cmd_segment, "Segment videos with a trained checkpoint"),
        ("align", cmd_align, "Align videos to their ground-truth action sets"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="Dataset to decode")
        p.add_argument("--out", required=True, help="Predictions file")
        p.add_argument("--hmm", choices=["static", "dynamic", "ground_truth"], default=None, help="Override the stored HMM variant")
        p.add_argument("--k", type=int, default=MC_SAMPLES, help="Monte Carlo samples per video")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(handler=handler)
        if name == "segment":
            p.add_argument("--grammar", choices=["monte-carlo", "none"], default="monte-carlo")
            p.add_argument("--pool", default=None, help="Training dataset whose sets form the grammar")
            p.add_argument("--weighted", action="store_true", help="Sample sets by training multiplicity")

    ev = sub.add_parser("eval", help="Score predictions against framewise labels")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--data", required=True, help="Labeled dataset directory")
    ev.add_argument("--metric", choices=["mof", "iod", "midpoint"], default="mof")
    ev.add_argument("--per-video-mof", action="store_true", help="Average MoF over videos instead of frames")
    ev.add_argument("--out", default=None, help="Also write the report here")
    ev.set_defaults(handler=cmd_eval)

    render = sub.add_parser("render", help="Draw segmentation strips")
    render.add_argument("--predictions", required=True)
    render.add_argument("--data", required=True)
    render.add_argument("--out", required=True, help="Image directory")
    render.set_defaults(handler=cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except (FileNotFoundError, argparse.ArgumentTypeError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        return 2
    except SegmentationError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except Exception as e:
        logger.error(f"An error occurred: {str(e)}")
        return 1
