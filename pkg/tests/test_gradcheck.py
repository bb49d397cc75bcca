from dataclasses import replace

import pytest
import torch
from conftest import make_network, make_spec, randomize_adapters

from tcr3.core.synthscene import generate_clip
from tcr3.errors import InvalidInputError
from tcr3.model.codec import LinearPatchCodec
from tcr3.training.gradcheck import GradSample, check_gradients, grad_check
from tcr3.training.trainer import TrainConfig, prepare_clip, tracking_loss


def test_codec_bias_gradient_matches_closed_form():
    torch.manual_seed(0)
    codec = LinearPatchCodec(patch_size=4, channels=8).double()
    latent = torch.randn(3, 1, 1, 8, dtype=torch.float64)
    target = torch.randn(3, 4, 4, 3, dtype=torch.float64)
    zeros_vis = torch.zeros(3, 4, 4, dtype=torch.float64)

    def loss_fn():
        return tracking_loss(codec.decode_track(latent), target, zeros_vis + 0.5, zeros_vis, vis_weight=0.0).total

    result = check_gradients(loss_fn, [("track_decoder.bias", codec.track_decoder.bias)], num_samples=48)

    with torch.no_grad():
        error = codec.decode_track(latent) - target
        # one patch per frame: bias entry k feeds pixel-channel k of every frame
        closed_form = 2.0 * error.reshape(3, -1).sum(0) / error.numel()
    torch.testing.assert_close(codec.track_decoder.bias.grad, closed_form, atol=1e-14, rtol=0)
    assert result.max_relative_error < 1e-6


def test_full_model_gradients_match_finite_differences():
    network = randomize_adapters(
        make_network(layers=2, dim=16, heads=2, image_height=32, image_width=32, num_frames=2)
    )
    clip = generate_clip(make_spec(num_frames=2, size=32), clip_id="grad")
    result = grad_check(network, prepare_clip(clip, dtype=torch.float64), num_samples=64, seed=0, min_per_block=64)

    assert len(result.samples) >= 64
    per_block = result.samples_per_block()
    assert per_block["dit.blocks.0"] >= 64 and per_block["dit.blocks.1"] >= 64
    assert result.blocks() == sorted(name for name, _ in network.named_parameters())
    assert result.max_relative_error < 1e-3


def test_zero_loss_has_zero_gradients(tiny_clip):
    network = randomize_adapters(make_network())
    prepared = prepare_clip(tiny_clip, dtype=torch.float64)
    with torch.no_grad():
        out = network(prepared.frames[None], prepared.pointmaps[None])
    exact = replace(prepared, target=out.tracks[0].clone())

    result = grad_check(network, exact, TrainConfig(vis_weight=0.0), num_samples=64)
    assert max(abs(s.analytic) for s in result.samples) < 1e-10
    assert max(abs(s.numeric) for s in result.samples) < 1e-6


def test_grad_check_leaves_network_untouched(tiny_clip):
    network = make_network(dtype=torch.float32)
    before = {k: v.clone() for k, v in network.state_dict().items()}
    grad_check(network, prepare_clip(tiny_clip), num_samples=4)
    assert all(torch.equal(v, before[k]) for k, v in network.state_dict().items())
    assert next(network.parameters()).dtype == torch.float32


def test_single_precision_parameters_are_rejected():
    param = torch.nn.Parameter(torch.zeros(3))
    with pytest.raises(InvalidInputError):
        check_gradients(lambda: param.sum(), [("p", param)])


def test_relative_error_floor():
    assert GradSample("p", 0, 0.0, 1e-9).relative_error == pytest.approx(1e-3)
    assert GradSample("p", 0, 2.0, 1.0).relative_error == pytest.approx(0.5)
