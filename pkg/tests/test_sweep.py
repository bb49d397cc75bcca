import csv

import pytest
from conftest import make_network, make_spec

from tcr3.core.synthscene import generate_clip
from tcr3.errors import InvalidInputError
from tcr3.eval import sweep
from tcr3.eval.metrics import clip_thresholds, evaluate
from tcr3.eval.sweep import (
    CSV_COLUMNS,
    GeometryNoise,
    length_sweep,
    prediction_sweep,
    predict_and_evaluate,
    stride_sweep,
    write_sweep_csv,
)


def test_prediction_sweep_of_ground_truth(tmp_path):
    clip = generate_clip(make_spec(num_frames=10))
    rows = prediction_sweep(
        clip.gt_track_pointmaps, clip.gt_visibility, clip, strides=(1, 2, 3, 20), lengths=(4, 8, 12)
    )
    assert [(r.sweep, r.value, r.num_frames) for r in rows] == [
        ("stride", 1, 10),
        ("stride", 2, 5),
        ("stride", 3, 4),
        ("length", 4, 4),
        ("length", 8, 8),
    ]
    assert all(r.average_jaccard == 1.0 and r.apd3d == 1.0 and r.occlusion_accuracy == 1.0 for r in rows)

    path = tmp_path / "out" / "sweep.csv"
    write_sweep_csv(rows, path)
    with open(path, newline="") as f:
        records = list(csv.DictReader(f))
    assert len(records) == len(rows)
    assert tuple(records[0]) == CSV_COLUMNS
    assert records[1]["value"] == "2" and records[1]["geometry"] == "input"


def test_stride_sweep_rows():
    network = make_network()
    specs = [make_spec(velocity=(0.02, 0.0, 0.0)), make_spec(velocity=(0.0, 0.02, 0.0), seed=1)]
    rows = stride_sweep(network, specs, strides=(1, 2))
    assert [r.value for r in rows] == [1, 2]
    assert all(r.num_clips == 2 and r.num_frames == 4 and r.geometry == "gt" for r in rows)
    assert all(0.0 <= r.average_jaccard <= 1.0 and 0.0 <= r.apd3d <= 1.0 for r in rows)


def test_length_sweep_uses_windows():
    network = make_network()
    rows = length_sweep(network, [make_spec(velocity=(0.02, 0.0, 0.0))], lengths=(4, 7), geometry="noisy")
    assert [(r.value, r.num_frames, r.geometry) for r in rows] == [(4, 4, "noisy"), (7, 7, "noisy")]


def test_noisy_geometry_is_scored_against_clean_truth(tiny_clip):
    network = make_network()
    clean = predict_and_evaluate(network, tiny_clip, "gt")
    noisy = predict_and_evaluate(network, tiny_clip, "noisy", GeometryNoise(depth=0.1, seed=2))
    assert clean.num_points == noisy.num_points == 256
    assert clean.to_dict() != noisy.to_dict()


def test_unknown_geometry_mode(tiny_clip):
    with pytest.raises(InvalidInputError):
        predict_and_evaluate(make_network(), tiny_clip, "estimated")


def test_sweep_rows_share_the_full_clip_thresholds(monkeypatch):
    clip = generate_clip(make_spec(num_frames=10, velocity=(0.1, 0.05, 0.0)))
    seen = []

    def recording_evaluate(*args, thresholds=None, **kwargs):
        seen.append(list(thresholds))
        return evaluate(*args, thresholds=thresholds, **kwargs)

    monkeypatch.setattr(sweep, "evaluate", recording_evaluate)
    rows = prediction_sweep(clip.gt_track_pointmaps, clip.gt_visibility, clip, strides=(1, 3), lengths=(4,))
    assert len(rows) == 3
    assert seen == [clip_thresholds(clip)] * 3
