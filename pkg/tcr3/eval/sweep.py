"""
Robustness sweeps over temporal stride and video length.

Model sweeps re-run inference on re-rendered clips; prediction sweeps only
re-score an existing long prediction on subsampled or truncated frames.
"""

import csv
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.synthscene import SceneSpec, TrackClip, generate_clip, perturb_geometry
from ..errors import InvalidInputError
from ..inference.predictor import predict_long_video
from ..model.pipeline import TrackingNetwork
from .metrics import EvalResult, QuerySpec, clip_thresholds, evaluate, mean_result

logger = logging.getLogger(__name__)

STRIDE_GRID = tuple(range(1, 13))
LENGTH_GRID = tuple(range(12, 121, 12))
GEOMETRY_MODES = ("gt", "noisy")
CSV_COLUMNS = ("sweep", "value", "geometry", "num_clips", "num_frames", "average_jaccard", "apd3d", "occlusion_accuracy")


@dataclass
class GeometryNoise:
    """Input-geometry corruption used for the `noisy` mode."""

    depth: float = 0.05
    rotation: float = 0.01
    translation: float = 0.02
    seed: int = 0


@dataclass
class SweepRow:
    sweep: str
    value: int
    geometry: str
    num_clips: int
    num_frames: int
    average_jaccard: float
    apd3d: float
    occlusion_accuracy: float

    @classmethod
    def from_result(cls, sweep: str, value: int, geometry: str, num_clips: int, num_frames: int, result: EvalResult):
        return cls(
            sweep=sweep,
            value=value,
            geometry=geometry,
            num_clips=num_clips,
            num_frames=num_frames,
            average_jaccard=result.average_jaccard,
            apd3d=result.apd3d,
            occlusion_accuracy=result.occlusion_accuracy,
        )


def _check_geometry(geometry: str):
    if geometry not in GEOMETRY_MODES:
        raise InvalidInputError(f"geometry must be one of {GEOMETRY_MODES}, got {geometry!r}")


def _model_input(clip: TrackClip, geometry: str, noise: GeometryNoise) -> TrackClip:
    if geometry == "gt":
        return clip
    return perturb_geometry(clip, noise.depth, (noise.rotation, noise.translation), seed=noise.seed)


def predict_and_evaluate(
    network: TrackingNetwork,
    clip: TrackClip,
    geometry: str = "gt",
    noise: Optional[GeometryNoise] = None,
    query: Optional[QuerySpec] = None,
    thresholds: Optional[Sequence[float]] = None,
) -> EvalResult:
    """Run inference on (possibly corrupted) input geometry and score against the clean ground truth."""
    _check_geometry(geometry)
    inputs = _model_input(clip, geometry, noise or GeometryNoise())
    pred = predict_long_video(network, inputs.frames, inputs.recon_pointmaps, inputs.depths, inputs.cameras)
    return evaluate(pred.tracks, pred.visibility, clip, query, thresholds=thresholds)


def _render(spec: SceneSpec, num_frames: int) -> TrackClip:
    return generate_clip(replace(spec, num_frames=num_frames), stride=1)


def stride_sweep(
    network: TrackingNetwork,
    specs: Sequence[SceneSpec],
    strides: Sequence[int] = STRIDE_GRID,
    geometry: str = "gt",
    noise: Optional[GeometryNoise] = None,
    query: Optional[QuerySpec] = None,
) -> List[SweepRow]:
    """Clips of the model's length at increasing temporal stride, one row per stride."""
    _check_geometry(geometry)
    num_frames = network.config.num_frames
    bases = [_render(spec, (num_frames - 1) * max(strides) + 1) for spec in specs]
    thresholds = [clip_thresholds(base) for base in bases]
    rows = []
    for stride in strides:
        indices = list(range(0, (num_frames - 1) * stride + 1, stride))
        results = [
            predict_and_evaluate(network, base.subsample(indices), geometry, noise, query, th)
            for base, th in zip(bases, thresholds)
        ]
        rows.append(SweepRow.from_result("stride", stride, geometry, len(bases), num_frames, mean_result(results)))
        logger.info(f"stride {stride}: AJ={rows[-1].average_jaccard:.4f} APD3D={rows[-1].apd3d:.4f}")
    return rows


def length_sweep(
    network: TrackingNetwork,
    specs: Sequence[SceneSpec],
    lengths: Sequence[int] = LENGTH_GRID,
    geometry: str = "gt",
    noise: Optional[GeometryNoise] = None,
    query: Optional[QuerySpec] = None,
) -> List[SweepRow]:
    """Videos of increasing length at stride 1, predicted with anchor windows."""
    _check_geometry(geometry)
    bases = [_render(spec, max(lengths)) for spec in specs]
    thresholds = [clip_thresholds(base) for base in bases]
    rows = []
    for length in lengths:
        results = [
            predict_and_evaluate(network, base.subsample(range(length)), geometry, noise, query, th)
            for base, th in zip(bases, thresholds)
        ]
        rows.append(SweepRow.from_result("length", length, geometry, len(bases), length, mean_result(results)))
        logger.info(f"length {length}: AJ={rows[-1].average_jaccard:.4f} APD3D={rows[-1].apd3d:.4f}")
    return rows


def prediction_sweep(
    pred_tracks: np.ndarray,
    pred_visibility: np.ndarray,
    clip: TrackClip,
    strides: Sequence[int] = STRIDE_GRID,
    lengths: Sequence[int] = LENGTH_GRID,
    query: Optional[QuerySpec] = None,
) -> List[SweepRow]:
    """
    Re-score one prediction on frames 0, s, 2s, ... and on the first L frames.

    Grid values the clip is too short for are skipped. Every row is scored
    against the thresholds of the full clip.
    """
    thresholds = clip_thresholds(clip)
    rows = []
    sweeps: List[Tuple[str, int, List[int]]] = [
        ("stride", s, list(range(0, clip.num_frames, s))) for s in strides
    ] + [("length", n, list(range(n))) for n in lengths]
    for sweep, value, indices in sweeps:
        if len(indices) < 2 or indices[-1] >= clip.num_frames:
            logger.warning(f"Skipping {sweep}={value}: clip has {clip.num_frames} frames")
            continue
        result = evaluate(
            pred_tracks[indices], pred_visibility[indices], clip.subsample(indices), query, thresholds=thresholds
        )
        rows.append(SweepRow.from_result(sweep, value, "input", 1, len(indices), result))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(CSV_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    logger.info(f"Wrote {len(rows)} sweep rows to {path}")
