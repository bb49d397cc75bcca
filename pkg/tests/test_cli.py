import csv
import json

import numpy as np
import pytest
import torch
from click.testing import CliRunner
from conftest import make_spec, tiny_config

from cli.tcr3_cli import cli
from tcr3.inference.predictor import predict_long_video
from tcr3.model.pipeline import TrackingNetwork
from tcr3.storage.checkpoint import load_checkpoint
from tcr3.storage.clips import load_clip, load_predictions, save_clip, save_predictions

MODEL_FLAGS = [
    "--layers", "2", "--dim", "16", "--heads", "2", "--frames", "4",
    "--patch-size", "4", "--latent-channels", "8", "--lora-rank", "2",
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def data_dir(tiny_clip, tmp_path):
    save_clip(tiny_clip, tmp_path / "data")
    return tmp_path / "data"


@pytest.fixture
def checkpoint(runner, data_dir, tmp_path):
    path = tmp_path / "model.tcr3"
    result = runner.invoke(cli, ["train", "--data", str(data_dir), "--out", str(path), "--steps", "2", "--batch-size", "1"] + MODEL_FLAGS)
    assert result.exit_code == 0, result.output
    return path


def test_synth_is_byte_reproducible(runner, tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(make_spec().to_dict()))
    for name in ("a", "b"):
        result = runner.invoke(cli, ["synth", "--spec", str(spec_path), "--count", "1", "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    for filename in ("clip_0000.tcr3", "clip_0000.json"):
        assert (tmp_path / "a" / filename).read_bytes() == (tmp_path / "b" / filename).read_bytes()
    load_clip(tmp_path / "a" / "clip_0000.json").check_invariants()


def test_synth_random_scenes_with_noise(runner, tmp_path):
    result = runner.invoke(
        cli,
        ["synth", "--count", "2", "--seed", "3", "--size", "16", "--frames", "3", "--out", str(tmp_path),
         "--depth-noise", "0.02", "--sparse", "10"],
    )
    assert result.exit_code == 0, result.output
    clip = load_clip(tmp_path / "clip_0001.json")
    assert clip.num_frames == 3 and clip.track_valid.sum() == 10
    assert clip.spec.seed == 4


def test_train_without_steps_writes_initial_model(runner, data_dir, tmp_path):
    out = tmp_path / "init.tcr3"
    result = runner.invoke(cli, ["train", "--data", str(data_dir), "--out", str(out), "--steps", "0", "--seed", "5"] + MODEL_FLAGS)
    assert result.exit_code == 0, result.output

    loaded, meta = load_checkpoint(out)
    assert meta["train"]["steps"] == 0
    torch.manual_seed(5)
    fresh = TrackingNetwork(tiny_config())
    assert loaded.config == fresh.config
    for name, tensor in fresh.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], tensor), name


def test_training_runs_are_reproducible(runner, data_dir, tmp_path, checkpoint):
    again = tmp_path / "again.tcr3"
    result = runner.invoke(cli, ["train", "--data", str(data_dir), "--out", str(again), "--steps", "2", "--batch-size", "1"] + MODEL_FLAGS)
    assert result.exit_code == 0, result.output
    assert again.read_bytes() == checkpoint.read_bytes()
    records = [json.loads(line) for line in checkpoint.with_suffix(".jsonl").read_text().splitlines()]
    assert len(records) == 2


def test_train_config_file_and_ablation_flags(runner, data_dir, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"model": tiny_config().to_dict(), "train": {"steps": 1, "batch_size": 1}}))
    out = tmp_path / "ablate.tcr3"
    result = runner.invoke(
        cli, ["train", "--config", str(config), "--data", str(data_dir), "--out", str(out), "--no-rope-align", "--no-anchor"]
    )
    assert result.exit_code == 0, result.output
    loaded, _ = load_checkpoint(out)
    assert not loaded.config.temporal_rope_alignment and not loaded.config.first_frame_anchoring
    assert loaded.config.residual_head


def test_infer_matches_library(runner, checkpoint, data_dir, tmp_path):
    out = tmp_path / "pred.tcr3"
    result = runner.invoke(cli, ["infer", "--checkpoint", str(checkpoint), "--clip", str(data_dir / "tiny.json"), "--out", str(out)])
    assert result.exit_code == 0, result.output
    tracks, visibility, meta = load_predictions(out)
    assert meta["indices"] == [0, 1, 2, 3] and meta["clip_id"] == "tiny"

    network, _ = load_checkpoint(checkpoint)
    clip = load_clip(data_dir / "tiny.json")
    expected = predict_long_video(network, clip.frames, clip.recon_pointmaps, clip.depths, clip.cameras)
    assert np.array_equal(tracks, expected.tracks)
    assert np.array_equal(visibility, expected.visibility)

    forced = tmp_path / "forced.tcr3"
    result = runner.invoke(
        cli, ["infer", "--checkpoint", str(checkpoint), "--clip", str(data_dir / "tiny.json"), "--out", str(forced), "--single-pass"]
    )
    assert result.exit_code == 0, result.output
    assert np.array_equal(load_predictions(forced)[0], tracks)


def test_infer_strided_subset(runner, checkpoint, data_dir, tmp_path):
    out = tmp_path / "pred.tcr3"
    args = ["infer", "--checkpoint", str(checkpoint), "--clip", str(data_dir / "tiny.json"), "--out", str(out), "--stride", "2"]
    assert runner.invoke(cli, args).exit_code == 0
    tracks, _, meta = load_predictions(out)
    assert meta["indices"] == [0, 2] and tracks.shape[0] == 2

    args[-1] = "9"
    result = runner.invoke(cli, args)
    assert result.exit_code == 1


def test_eval_ground_truth_scores_one(runner, tiny_clip, data_dir, tmp_path):
    pred = tmp_path / "gt.tcr3"
    save_predictions(pred, tiny_clip.gt_track_pointmaps, tiny_clip.gt_visibility, {"clip_id": "tiny", "indices": [0, 1, 2, 3]})
    out = tmp_path / "eval.json"
    sweep_csv = tmp_path / "sweep.csv"
    result = runner.invoke(
        cli,
        ["eval", "--pred", str(pred), "--gt", str(data_dir / "tiny.json"), "--out", str(out), "--sweep-csv", str(sweep_csv)],
    )
    assert result.exit_code == 0, result.output
    scores = json.loads(out.read_text())
    assert scores["average_jaccard"] == 1.0 and scores["apd3d"] == 1.0 and scores["occlusion_accuracy"] == 1.0
    with open(sweep_csv, newline="") as f:
        rows = list(csv.DictReader(f))
    # strides 1..3 fit four frames; no length grid value does
    assert [row["value"] for row in rows] == ["1", "2", "3"]


def test_eval_subsamples_ground_truth(runner, tiny_clip, data_dir, tmp_path):
    pred = tmp_path / "gt.tcr3"
    sub = tiny_clip.subsample([0, 2])
    save_predictions(pred, sub.gt_track_pointmaps, sub.gt_visibility, {"indices": [0, 2]})
    out = tmp_path / "eval.json"
    result = runner.invoke(
        cli, ["eval", "--pred", str(pred), "--gt", str(data_dir / "tiny.json"), "--out", str(out), "--visibility", "projection"]
    )
    assert result.exit_code == 0, result.output
    assert json.loads(out.read_text())["num_frames"] == 2


def test_attn_writes_heatmaps(runner, checkpoint, data_dir, tmp_path):
    out = tmp_path / "attn"
    result = runner.invoke(
        cli,
        ["attn", "--checkpoint", str(checkpoint), "--clip", str(data_dir / "tiny.json"), "--pixel", "5", "6",
         "--frame", "2", "--layers", "0,1", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.iterdir()) == ["layer_00.png", "layer_01.png", "report.json"]
    report = json.loads((out / "report.json").read_text())
    assert sum(report["frame_mass"]) == pytest.approx(1.0, abs=1e-5)


def test_sweep_writes_one_row_per_grid_value(runner, checkpoint, tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(make_spec(velocity=(0.02, 0.0, 0.0)).to_dict()))
    out = tmp_path / "sweep.csv"
    result = runner.invoke(
        cli,
        ["sweep", "--checkpoint", str(checkpoint), "--out", str(out), "--spec", str(spec_path),
         "--strides", "1,2", "--lengths", "4,6"],
    )
    assert result.exit_code == 0, result.output
    with open(out, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [(row["sweep"], row["value"]) for row in rows] == [("stride", "1"), ("stride", "2"), ("length", "4"), ("length", "6")]


def test_corrupt_checkpoint_exits_with_error(runner, data_dir, tmp_path):
    bad = tmp_path / "bad.tcr3"
    bad.write_bytes(b"not a checkpoint")
    result = runner.invoke(cli, ["infer", "--checkpoint", str(bad), "--clip", str(data_dir / "tiny.json"), "--out", str(tmp_path / "p")])
    assert result.exit_code == 1
    assert "Error running inference" in result.output
