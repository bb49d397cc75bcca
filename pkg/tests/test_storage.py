import json
import struct

import numpy as np
import pytest
import torch
from conftest import make_network, randomize_adapters

from tcr3.errors import ContainerFormatError, InvalidInputError
from tcr3.storage.checkpoint import load_checkpoint, save_checkpoint
from tcr3.storage.clips import list_clips, load_clip, load_predictions, save_clip, save_predictions
from tcr3.storage.container import MAGIC, decode_container, encode_container, read_container, write_container


@pytest.fixture
def entries():
    rng = np.random.default_rng(0)
    return {
        "a": rng.normal(size=(2, 3)).astype(np.float32),
        "b/c": rng.normal(size=(4,)),
        "mask": (rng.random((3, 1, 2)) < 0.5).astype(np.uint8),
        "scalar": np.array(2.5),
        "empty": np.zeros((0, 3)),
    }


def test_container_roundtrip_is_bit_identical(entries, tmp_path):
    path = tmp_path / "sub" / "x.tcr3"
    write_container(path, entries)
    decoded = read_container(path)
    assert list(decoded) == list(entries)
    for name, array in entries.items():
        assert decoded[name].dtype == array.dtype
        assert decoded[name].shape == array.shape
        assert decoded[name].tobytes() == array.tobytes()
    assert encode_container(decoded) == path.read_bytes()


def test_container_header_layout():
    data = encode_container({"x": np.array([1.0], dtype=np.float32)})
    assert data[:4] == MAGIC
    assert struct.unpack("<HI", data[4:10]) == (1, 1)
    assert struct.unpack("<I", data[10:14]) == (1,)
    assert data[14:15] == b"x"
    assert struct.unpack("<BB", data[15:17]) == (0, 1)
    assert struct.unpack("<f", data[-4:]) == (1.0,)


def test_unsupported_dtype_is_rejected():
    with pytest.raises(InvalidInputError):
        encode_container({"x": np.arange(3, dtype=np.int64)})


@pytest.mark.parametrize(
    "corrupt",
    [
        lambda d: b"XXXX" + d[4:],
        lambda d: d[:4] + struct.pack("<H", 9) + d[6:],
        lambda d: d[:-1],
        lambda d: d + b"\x00",
        lambda d: d[:15] + b"\x07" + d[16:],
    ],
    ids=["magic", "version", "truncated", "trailing", "dtype"],
)
def test_malformed_containers_are_rejected(corrupt):
    data = encode_container({"x": np.array([1.0, 2.0], dtype=np.float32)})
    with pytest.raises(ContainerFormatError):
        decode_container(corrupt(data))


def test_duplicate_names_are_rejected():
    single = encode_container({"x": np.zeros(1, dtype=np.float32)})
    body = single[10:]
    doubled = MAGIC + struct.pack("<HI", 1, 2) + body + body
    with pytest.raises(ContainerFormatError):
        decode_container(doubled)


def test_missing_container_file(tmp_path):
    with pytest.raises(ContainerFormatError):
        read_container(tmp_path / "nope.tcr3")


def test_clip_roundtrip(tiny_clip, tmp_path):
    manifest = save_clip(tiny_clip, tmp_path)
    assert manifest.name == "tiny.json" and (tmp_path / "tiny.tcr3").exists()
    loaded = load_clip(manifest)
    loaded.check_invariants()
    assert loaded.clip_id == "tiny" and loaded.stride == 1 and loaded.units == "scene"
    for name in ("frames", "depths", "recon_pointmaps", "gt_track_pointmaps", "gt_visibility", "track_valid", "frame_times"):
        assert np.array_equal(getattr(loaded, name), getattr(tiny_clip, name)), name
    assert loaded.spec == tiny_clip.spec
    assert list_clips(tmp_path) == [manifest]


def test_manifest_must_match_container(tiny_clip, tmp_path):
    manifest_path = save_clip(tiny_clip, tmp_path)
    manifest = json.loads(manifest_path.read_text())
    manifest["entries"]["depths"]["shape"] = [1, 2, 3]
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(ContainerFormatError):
        load_clip(manifest_path)

    manifest["entries"]["depths"]["shape"] = [4, 16, 16]
    manifest["entries"]["depths"]["dtype"] = "u8"
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(ContainerFormatError):
        load_clip(manifest_path)


def test_listing_skips_foreign_json(tiny_clip, tmp_path):
    save_clip(tiny_clip, tmp_path)
    (tmp_path / "notes.json").write_text('{"hello": 1}')
    (tmp_path / "broken.json").write_text("{")
    assert [p.name for p in list_clips(tmp_path)] == ["tiny.json"]
    with pytest.raises(ContainerFormatError):
        list_clips(tmp_path / "missing")


def test_predictions_roundtrip(tmp_path):
    tracks = np.random.default_rng(0).normal(size=(3, 4, 4, 3))
    visibility = np.random.default_rng(1).random((3, 4, 4))
    meta = {"clip_id": "c", "indices": [0, 2, 4]}
    save_predictions(tmp_path / "p.tcr3", tracks, visibility, meta)
    got_tracks, got_vis, got_meta = load_predictions(tmp_path / "p.tcr3")
    assert np.array_equal(got_tracks, tracks) and np.array_equal(got_vis, visibility)
    assert got_meta == meta

    write_container(tmp_path / "bad.tcr3", {"tracks": tracks})
    with pytest.raises(ContainerFormatError):
        load_predictions(tmp_path / "bad.tcr3")


@pytest.mark.parametrize("dtype", [torch.float32, torch.float64])
def test_checkpoint_roundtrip_is_bit_identical(tmp_path, dtype):
    network = randomize_adapters(make_network(dtype=dtype, temporal_rope_alignment=False))
    save_checkpoint(tmp_path / "model.tcr3", network, meta={"steps": 3})
    loaded, meta = load_checkpoint(tmp_path / "model.tcr3")
    assert meta == {"steps": 3}
    assert loaded.config == network.config
    original = network.state_dict()
    for name, tensor in loaded.state_dict().items():
        assert tensor.dtype == dtype
        assert torch.equal(tensor, original[name]), name


def test_checkpoint_with_foreign_tensors_is_rejected(tmp_path):
    save_checkpoint(tmp_path / "model.tcr3", make_network())
    entries = read_container(tmp_path / "model.tcr3")
    entries["param/extra"] = np.zeros(2)
    write_container(tmp_path / "model.tcr3", entries)
    with pytest.raises(ContainerFormatError):
        load_checkpoint(tmp_path / "model.tcr3")
