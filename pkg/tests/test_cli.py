import pytest

from src.cli import main
from src.data.dataset import load_dataset, read_predictions, write_predictions
from src.engine.checkpoint import load_checkpoint


@pytest.fixture
def trained(tmp_path):
    data = tmp_path / "data"
    assert main([
        "synth", "--out", str(data), "--classes", "3", "--dim", "4", "--videos", "6",
        "--test-videos", "2", "--mean-length", "5", "--set-min", "2", "--set-max", "2", "--seed", "1",
    ]) == 0
    model = tmp_path / "model.scv"
    assert main([
        "train", "--data", str(data / "train"), "--out", str(model), "--log", str(tmp_path / "train.jsonl"),
        "--iterations", "5", "--hidden", "8", "--lmin", "1", "--frame-normalized", "--seed", "2",
    ]) == 0
    return data, model


def test_synth_writes_train_and_test(trained):
    data, model = trained
    assert len(load_dataset(data / "train")) == 6
    assert len(load_dataset(data / "test")) == 2
    assert model.read_bytes()[:4] == b"SCV1"


def test_segment_and_align(trained, tmp_path):
    data, model = trained
    common = ["--checkpoint", str(model), "--data", str(data / "test"), "--k", "20"]
    assert main(["segment", *common, "--out", str(tmp_path / "seg.txt"), "--pool", str(data / "train")]) == 0
    assert main(["align", *common, "--out", str(tmp_path / "align.txt")]) == 0

    test = load_dataset(data / "test")
    segmented = read_predictions(tmp_path / "seg.txt", test.vocabulary)
    aligned = read_predictions(tmp_path / "align.txt", test.vocabulary)
    for video in test:
        assert segmented[video.video_id].T == video.T
        assert aligned[video.video_id].class_set == video.action_set
        assert aligned[video.video_id].T == video.T


def test_segment_requires_pool(trained, tmp_path):
    data, model = trained
    args = ["segment", "--checkpoint", str(model), "--data", str(data / "test"), "--out", str(tmp_path / "p.txt")]
    assert main(args) == 2
    assert main([*args, "--grammar", "none"]) == 0


def test_eval_ground_truth_is_perfect(trained, tmp_path, capsys):
    data, _ = trained
    test = load_dataset(data / "test")
    write_predictions(tmp_path / "gt.txt", {v.video_id: v.ground_truth() for v in test}, test.vocabulary)
    for metric in ("mof", "iod", "midpoint"):
        assert main(["eval", "--predictions", str(tmp_path / "gt.txt"), "--data", str(data / "test"), "--metric", metric]) == 0
        out = capsys.readouterr().out
        assert f"metric={metric}\n" in out
        assert "aggregate=1.000000\n" in out


def test_render_writes_images(trained, tmp_path):
    data, _ = trained
    test = load_dataset(data / "test")
    write_predictions(tmp_path / "gt.txt", {v.video_id: v.ground_truth() for v in test}, test.vocabulary)
    assert main(["render", "--predictions", str(tmp_path / "gt.txt"), "--data", str(data / "test"), "--out", str(tmp_path / "img")]) == 0
    assert sorted(p.name for p in (tmp_path / "img").iterdir()) == sorted(f"{v.video_id}.png" for v in test)


def test_usage_errors(tmp_path):
    assert main(["train", "--bogus"]) == 2
    assert main(["eval", "--predictions", str(tmp_path / "none.txt"), "--data", str(tmp_path / "missing")]) == 2


def test_missing_feature_file_is_a_usage_error(trained, tmp_path):
    data, model = trained
    test = load_dataset(data / "test")
    write_predictions(tmp_path / "gt.txt", {v.video_id: v.ground_truth() for v in test}, test.vocabulary)
    (data / "test" / "features" / f"{test.videos[0].video_id}.fvec").unlink()
    assert main(["eval", "--predictions", str(tmp_path / "gt.txt"), "--data", str(data / "test")]) == 2
    args = ["--checkpoint", str(model), "--data", str(data / "test"), "--out", str(tmp_path / "p.txt")]
    assert main(["segment", *args, "--grammar", "none"]) == 2
    assert main(["align", *args]) == 2


def test_train_with_ground_truth_hmm(trained, tmp_path):
    data, _ = trained
    model = tmp_path / "gt.scv"
    assert main([
        "train", "--data", str(data / "train"), "--out", str(model), "--hmm", "ground_truth",
        "--iterations", "3", "--hidden", "8", "--lmin", "1", "--seed", "2",
    ]) == 0
    assert load_checkpoint(model).hmm.variant == "ground_truth"
