"""
Clip and long-video prediction with a trained tracking network.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from ..core.geometry import CameraModel, NormalizationStats, Pointmap, compute_normalization
from ..errors import InvalidInputError
from ..model.dit import AttentionTrace
from ..model.pipeline import TrackingNetwork
from .windows import WindowPlan, plan_windows

logger = logging.getLogger(__name__)


@dataclass
class ClipPrediction:
    """
    World-space tracking pointmaps (T, H, W, 3) and visibility (T, H, W).

    `decoded` keeps the raw network output: normalized residuals with the
    residual head, normalized absolute tracks without it.
    """

    tracks: np.ndarray
    visibility: np.ndarray
    decoded: np.ndarray
    stats: NormalizationStats
    trace: Optional[AttentionTrace] = None


@dataclass
class PassRecord:
    frames: List[int]
    stats: NormalizationStats


@dataclass
class VideoPrediction:
    tracks: np.ndarray
    visibility: np.ndarray
    plan: WindowPlan
    passes: List[PassRecord] = field(default_factory=list)


def check_world_frames(cameras: Optional[Sequence[CameraModel]]):
    if not cameras:
        return
    worlds = {cam.world_id for cam in cameras}
    if len(worlds) > 1:
        raise InvalidInputError(f"reconstruction pointmaps come from different world frames: {sorted(worlds)}")


def video_stats(recon: np.ndarray, depths: np.ndarray) -> NormalizationStats:
    return compute_normalization([Pointmap(pm) for pm in recon], list(depths))


def predict_clip(
    network: TrackingNetwork,
    frames: np.ndarray,
    recon: np.ndarray,
    depths: Optional[np.ndarray] = None,
    cameras: Optional[Sequence[CameraModel]] = None,
    stats: Optional[NormalizationStats] = None,
    anchor_identity: bool = True,
    trace_queries: Optional[Sequence[int]] = None,
    trace_layers: Optional[Sequence[int]] = None,
) -> ClipPrediction:
    """
    Predict tracking pointmaps for one clip of at most the model's length.

    Args:
        network: Trained network
        frames: (T, H, W, 3) colors, frame 0 is the reference
        recon: (T, H, W, 3) reconstruction pointmaps in one world frame
        depths: (T, H, W) depths, needed when `stats` is not given
        cameras: Optional per-frame cameras used to check the world frame
        stats: Normalization statistics shared with other passes
        anchor_identity: Return the reference reconstruction at frame 0 (residual head only)
        trace_queries: Track tokens whose attention to capture
        trace_layers: Layers to capture

    Returns:
        ClipPrediction in world coordinates
    """
    frames = np.asarray(frames)
    recon = np.asarray(recon, dtype=np.float64)
    if frames.shape != recon.shape or recon.ndim != 4:
        raise InvalidInputError(f"frames {frames.shape} and recon {recon.shape} must both be (T, H, W, 3)")
    if recon.shape[0] > network.config.num_frames:
        raise InvalidInputError(f"{recon.shape[0]} frames exceed the model clip length {network.config.num_frames}")
    check_world_frames(cameras)
    if stats is None:
        if depths is None:
            raise InvalidInputError("predict_clip needs depths or precomputed normalization stats")
        stats = video_stats(recon, depths)

    dtype = next(network.parameters()).dtype
    normalized = (recon - stats.mean) / stats.scale
    network.eval()
    with torch.no_grad():
        out = network(
            torch.as_tensor(frames[None], dtype=dtype),
            torch.as_tensor(normalized[None], dtype=dtype),
            trace_queries=trace_queries,
            trace_layers=trace_layers,
        )
    decoded = out.tracks[0].double().numpy()
    visibility = out.visibility[0].double().numpy()

    if network.config.residual_head:
        tracks = recon[0][None] + stats.scale * decoded
        if anchor_identity:
            tracks[0] = recon[0]
    else:
        tracks = decoded * stats.scale + stats.mean
    return ClipPrediction(tracks=tracks, visibility=visibility, decoded=decoded, stats=stats, trace=out.trace)


def predict_long_video(
    network: TrackingNetwork,
    frames: np.ndarray,
    recon: np.ndarray,
    depths: np.ndarray,
    cameras: Optional[Sequence[CameraModel]] = None,
    pad: bool = False,
    force_single_pass: bool = False,
    anchor_identity: bool = True,
) -> VideoPrediction:
    """
    Predict a video of any length with strided anchor windows.

    One set of normalization statistics is computed over the whole video and
    reused by every pass; each pass's outputs are scattered back to their
    original frame indices, frame 0 coming from the first pass.
    """
    recon = np.asarray(recon, dtype=np.float64)
    length = recon.shape[0]
    capacity = network.config.max_frame_count
    check_world_frames(cameras)
    stats = video_stats(recon, depths)

    if force_single_pass or length <= capacity + 1:
        plan = plan_windows(length, max(capacity, length - 1))
        pred = predict_clip(network, frames, recon, stats=stats, anchor_identity=anchor_identity)
        return VideoPrediction(pred.tracks, pred.visibility, plan, [PassRecord(list(range(length)), stats)])

    plan = plan_windows(length, capacity, pad=pad)
    H, W = recon.shape[1:3]
    tracks = np.full((length, H, W, 3), np.nan)
    visibility = np.full((length, H, W), np.nan)
    passes = []
    for k in range(plan.num_passes):
        indices = plan.pass_frames(k)
        pred = predict_clip(network, frames[indices], recon[indices], stats=stats, anchor_identity=anchor_identity)
        group = plan.groups[k]
        tracks[group] = pred.tracks[1 : len(group) + 1]
        visibility[group] = pred.visibility[1 : len(group) + 1]
        if k == 0:
            tracks[0] = pred.tracks[0]
            visibility[0] = pred.visibility[0]
        passes.append(PassRecord(indices, stats))
        logger.info(f"Pass {k + 1}/{plan.num_passes}: {len(group)} frames")
    return VideoPrediction(tracks, visibility, plan, passes)
