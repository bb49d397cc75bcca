import json

import numpy as np
import pytest
from conftest import make_network, make_spec, randomize_adapters, tiny_config
from PIL import Image

from tcr3.core.synthscene import generate_clip
from tcr3.errors import InvalidInputError
from tcr3.eval.attention import (
    aligned_argmax_rate,
    attention_report,
    heatmap_image,
    layer_weights,
    track_token,
    write_attention_outputs,
)


@pytest.fixture
def network():
    return randomize_adapters(make_network())


def test_track_token_index():
    config = tiny_config()
    assert track_token(config, 0, (0, 0)) == 0
    assert track_token(config, 1, (5, 9)) == (1 * 4 + 2) * 4 + 1
    with pytest.raises(InvalidInputError):
        track_token(config, 0, (16, 0))


def test_report_masses_are_distributions(network, tiny_clip):
    report, trace = attention_report(network, tiny_clip, pixel=(6, 7), frame=2)
    assert report.token == track_token(network.config, 2, (6, 7))
    assert len(report.frame_mass) == 4
    assert sum(report.frame_mass) == pytest.approx(1.0, abs=1e-5)
    assert set(report.per_layer_mass) == {0, 1}
    for mass in report.per_layer_mass.values():
        assert sum(mass) == pytest.approx(1.0, abs=1e-5)
    assert report.argmax_frame == int(np.argmax(report.frame_mass))
    assert [c.layer for c in report.correspondence] == [0, 1]
    assert layer_weights(trace, 1).shape == (1, 4, 4, 4)


def test_static_scene_target_cell_is_own_cell(network):
    clip = generate_clip(make_spec(velocity=(0.0, 0.0, 0.0)))
    report, _ = attention_report(network, clip, pixel=(13, 6), frame=3, layers=[1])
    assert report.correspondence[0].target_cell == (1, 3)
    assert report.correspondence[0].hit == (report.correspondence[0].peak_cell == (1, 3))


def test_occluded_target_has_no_cell(network):
    clip = generate_clip(make_spec(velocity=(2.0, 0.0, 0.0)))
    sphere = np.argwhere(clip.recon_pointmaps[0][..., 2] < 3.0)[0]
    v, u = int(sphere[0]), int(sphere[1])
    report, _ = attention_report(network, clip, pixel=(u, v), frame=3, layers=[0])
    assert report.correspondence[0].target_cell is None
    assert not report.correspondence[0].hit


def test_report_rejects_bad_frame(network, tiny_clip):
    with pytest.raises(InvalidInputError):
        attention_report(network, tiny_clip, pixel=(0, 0), frame=4)


def test_untraced_layer_is_rejected(network, tiny_clip):
    _, trace = attention_report(network, tiny_clip, pixel=(0, 0), frame=1, layers=[0])
    with pytest.raises(InvalidInputError):
        layer_weights(trace, 1)


def test_heatmap_tiles_frames_left_to_right():
    weights = np.zeros((3, 2, 2))
    weights[1, 0, 1] = 0.8
    weights[2, 1, 0] = 0.4
    image = heatmap_image(weights, scale=2)
    assert image.size == (12, 4)
    pixels = np.asarray(image)
    assert pixels[0, 6] == 255 and pixels[1, 7] == 255
    assert pixels[2, 8] == 128
    assert pixels.sum() == 255 * 4 + 128 * 4


def test_outputs_are_written(network, tiny_clip, tmp_path):
    report, trace = attention_report(network, tiny_clip, pixel=(3, 3), frame=1)
    written = write_attention_outputs(report, trace, tmp_path / "attn")
    assert [p.name for p in written] == ["layer_00.png", "layer_01.png", "report.json"]
    with Image.open(written[0]) as image:
        assert image.size == (4 * 4 * 4, 4 * 4)
    data = json.loads(written[-1].read_text())
    assert data["token"] == report.token and set(data["per_layer_mass"]) == {"0", "1"}


def test_aligned_argmax_rate_is_a_fraction(network, tiny_clip):
    rate = aligned_argmax_rate(network, tiny_clip, num_tokens=16, seed=0)
    assert 0.0 <= rate <= 1.0
