"""
Clip files (container + JSON manifest) and prediction files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..core.geometry import CameraModel
from ..core.synthscene import SceneSpec, TrackClip
from ..errors import ContainerFormatError
from .container import DTYPES, read_container, write_container

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "tcr3-clip"
MANIFEST_VERSION = 1
DTYPE_NAMES = {0: "f32", 1: "f64", 2: "u8"}


def json_entry(data: Dict[str, Any]) -> np.ndarray:
    """JSON document as a u8 container entry."""
    return np.frombuffer(json.dumps(data, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def parse_json_entry(entry: np.ndarray, what: str) -> Dict[str, Any]:
    try:
        return json.loads(entry.tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerFormatError(f"{what} entry is not valid JSON: {e}") from e


def _clip_entries(clip: TrackClip) -> Dict[str, np.ndarray]:
    return {
        "frames": clip.frames.astype(np.float64),
        "depths": clip.depths.astype(np.float64),
        "intrinsics": np.stack([cam.intrinsics for cam in clip.cameras]).astype(np.float64),
        "rotations": np.stack([cam.rotation for cam in clip.cameras]).astype(np.float64),
        "translations": np.stack([cam.translation for cam in clip.cameras]).astype(np.float64),
        "recon_pointmaps": clip.recon_pointmaps.astype(np.float64),
        "gt_track_pointmaps": clip.gt_track_pointmaps.astype(np.float64),
        "gt_visibility": clip.gt_visibility.astype(np.uint8),
        "track_valid": clip.track_valid.astype(np.uint8),
        "frame_times": np.asarray(clip.frame_times, dtype=np.float64),
    }


def save_clip(clip: TrackClip, out_dir: Union[str, Path]) -> Path:
    """
    Write `<clip_id>.tcr3` and `<clip_id>.json` into `out_dir`.

    Returns:
        Path of the manifest
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    container_path = out_dir / f"{clip.clip_id}.tcr3"
    entries = _clip_entries(clip)
    write_container(container_path, entries)

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "clip_id": clip.clip_id,
        "container": container_path.name,
        "units": clip.units,
        "stride": clip.stride,
        "num_frames": clip.num_frames,
        "height": clip.height,
        "width": clip.width,
        "world_ids": [cam.world_id for cam in clip.cameras],
        "entries": {
            name: {"shape": list(array.shape), "dtype": "u8" if array.dtype == np.uint8 else "f64"}
            for name, array in entries.items()
        },
        "spec": clip.spec.to_dict() if clip.spec is not None else None,
    }
    manifest_path = out_dir / f"{clip.clip_id}.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Saved clip {clip.clip_id} ({clip.num_frames} frames) to {manifest_path}")
    return manifest_path


def validate_manifest(manifest: Dict[str, Any], entries: Dict[str, np.ndarray]):
    """Every referenced entry must exist with its declared shape and dtype."""
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ContainerFormatError(f"not a clip manifest (format={manifest.get('format')!r})")
    for name, declared in manifest.get("entries", {}).items():
        if name not in entries:
            raise ContainerFormatError(f"manifest references missing entry {name!r}")
        array = entries[name]
        if list(array.shape) != list(declared["shape"]):
            raise ContainerFormatError(f"entry {name!r} has shape {list(array.shape)}, manifest says {declared['shape']}")
        code = next(c for c, dtype in DTYPES.items() if dtype == array.dtype)
        if DTYPE_NAMES[code] != declared["dtype"]:
            raise ContainerFormatError(f"entry {name!r} is {DTYPE_NAMES[code]}, manifest says {declared['dtype']}")


def load_clip(manifest_path: Union[str, Path]) -> TrackClip:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ContainerFormatError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ContainerFormatError(f"{manifest_path}: invalid JSON: {e}") from e
    entries = read_container(manifest_path.parent / manifest["container"])
    validate_manifest(manifest, entries)

    cameras = [
        CameraModel(*intrinsics.tolist(), rotation=rotation, translation=translation, world_id=world_id)
        for intrinsics, rotation, translation, world_id in zip(
            entries["intrinsics"], entries["rotations"], entries["translations"], manifest["world_ids"]
        )
    ]
    spec = SceneSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
    return TrackClip(
        frames=entries["frames"],
        depths=entries["depths"],
        cameras=cameras,
        recon_pointmaps=entries["recon_pointmaps"],
        gt_track_pointmaps=entries["gt_track_pointmaps"],
        gt_visibility=entries["gt_visibility"].astype(np.float64),
        stride=int(manifest["stride"]),
        track_valid=entries["track_valid"].astype(bool),
        frame_times=entries["frame_times"],
        clip_id=manifest["clip_id"],
        units=manifest.get("units", "scene"),
        spec=spec,
    )


def list_clips(data_dir: Union[str, Path]) -> List[Path]:
    """Clip manifests in a directory, sorted by name."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise ContainerFormatError(f"data directory not found: {data_dir}")
    manifests = []
    for path in sorted(data_dir.glob("*.json")):
        try:
            if json.loads(path.read_text(encoding="utf-8")).get("format") == MANIFEST_FORMAT:
                manifests.append(path)
        except json.JSONDecodeError:
            logger.warning(f"Skipping unreadable JSON file {path}")
    return manifests


def save_predictions(
    path: Union[str, Path],
    tracks: np.ndarray,
    visibility: np.ndarray,
    meta: Optional[Dict[str, Any]] = None,
):
    """Predicted tracks (T, H, W, 3) and visibility (T, H, W) in one container."""
    write_container(
        path,
        {
            "tracks": np.asarray(tracks, dtype=np.float64),
            "visibility": np.asarray(visibility, dtype=np.float64),
            "meta": json_entry(meta or {}),
        },
    )


def load_predictions(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, Dict[str, Any]]:
    entries = read_container(path)
    for name in ("tracks", "visibility", "meta"):
        if name not in entries:
            raise ContainerFormatError(f"{path}: prediction file lacks entry {name!r}")
    return entries["tracks"], entries["visibility"], parse_json_entry(entries["meta"], "meta")
