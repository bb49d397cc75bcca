import numpy as np
import pytest
import torch

from tcr3.core.geometry import CameraModel
from tcr3.core.synthscene import CameraPath, MotionPath, Primitive, SceneSpec, generate_clip
from tcr3.model.dit import ModelConfig
from tcr3.model.pipeline import TrackingNetwork


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run training-run checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def camera():
    return CameraModel(fx=16.0, fy=16.0, cx=7.5, cy=7.5)


def make_spec(num_frames=4, size=16, velocity=(0.05, 0.0, 0.0), camera_kind="static", seed=0):
    """One sphere and one box in front of a background plane."""
    focal = float(size)
    return SceneSpec(
        width=size,
        height=size,
        num_frames=num_frames,
        primitives=[
            Primitive(
                kind="sphere",
                center=[-0.3, 0.0, 3.0],
                size=[0.6],
                color=[0.9, 0.2, 0.2],
                motion=MotionPath(kind="constant", velocity=list(velocity)),
            ),
            Primitive(kind="box", center=[0.6, 0.4, 3.5], size=[0.5, 0.5, 0.5], color=[0.2, 0.8, 0.3]),
        ],
        camera=CameraPath(kind=camera_kind, fx=focal, fy=focal, cx=(size - 1) / 2, cy=(size - 1) / 2),
        seed=seed,
    )


@pytest.fixture
def tiny_spec():
    return make_spec()


@pytest.fixture
def tiny_clip(tiny_spec):
    return generate_clip(tiny_spec, clip_id="tiny")


def tiny_config(**overrides):
    fields = dict(
        layers=2,
        dim=16,
        heads=2,
        image_height=16,
        image_width=16,
        patch_size=4,
        latent_channels=8,
        num_frames=4,
        lora_rank=2,
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def make_network(seed=0, dtype=torch.float64, **overrides):
    torch.manual_seed(seed)
    return TrackingNetwork(tiny_config(**overrides)).to(dtype)


@pytest.fixture
def tiny_network():
    return make_network()


def randomize_adapters(network, seed=1, std=0.1):
    """Give every LoRA B a non-zero value so adapters contribute."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in network.named_parameters():
            if name.endswith("adapter.B"):
                param.copy_(torch.randn(param.shape, generator=gen, dtype=param.dtype) * std)
    return network
