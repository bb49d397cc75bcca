"""
3D tracking metrics: average Jaccard, 3D points-within-threshold and
occlusion accuracy, computed after a single Sim(3) alignment per sequence.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from einops import rearrange

from ..config import DEFAULT_SEED, METRIC_THRESHOLDS, PROJECTION_VISIBILITY_TOL
from ..core.geometry import (
    SCALE_EPS,
    Pointmap,
    Sim3Transform,
    percentile_inliers,
    umeyama_sim3,
    visibility_from_projection,
)
from ..core.synthscene import TrackClip
from ..errors import DegenerateAlignmentError, InvalidInputError

logger = logging.getLogger(__name__)

VISIBILITY_THRESHOLD = 0.5
QUERY_MODES = ("dense", "sparse")


@dataclass
class TrajectorySet:
    """P trajectories over T frames: positions (P, T, 3), visibility and valid mask (P, T)."""

    positions: np.ndarray
    visibility: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[-1] != 3:
            raise InvalidInputError(f"positions must be (P, T, 3), got {self.positions.shape}")
        if self.visibility.shape != self.positions.shape[:2]:
            raise InvalidInputError(f"visibility {self.visibility.shape} does not match positions {self.positions.shape}")
        if self.valid is None:
            self.valid = np.ones(self.visibility.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.visibility.shape:
            raise InvalidInputError(f"valid mask {self.valid.shape} does not match visibility {self.visibility.shape}")

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def num_frames(self) -> int:
        return self.positions.shape[1]

    def visible(self) -> np.ndarray:
        return self.visibility >= VISIBILITY_THRESHOLD

    def with_positions(self, positions: np.ndarray) -> "TrajectorySet":
        return TrajectorySet(positions, self.visibility, self.valid)


@dataclass
class EvalResult:
    average_jaccard: float
    apd3d: float
    occlusion_accuracy: float
    thresholds: List[float]
    jaccard_per_threshold: List[float]
    apd_per_threshold: List[float]
    alignment: Optional[Dict[str, Any]] = None
    num_points: int = 0
    num_frames: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class QuerySpec:
    """Which first-frame pixels to evaluate: a dense lattice or random sparse picks."""

    mode: str = "dense"
    num_points: int = 256
    grid_step: int = 1
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.mode not in QUERY_MODES:
            raise InvalidInputError(f"query mode must be one of {QUERY_MODES}, got {self.mode!r}")
        if self.grid_step < 1 or self.num_points < 1:
            raise InvalidInputError("grid_step and num_points must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuerySpec":
        return cls(**data)


def _fraction(hits: np.ndarray, mask: np.ndarray) -> float:
    total = np.count_nonzero(mask)
    if total == 0:
        return 1.0
    return float(np.count_nonzero(hits & mask) / total)


def _errors(pred: TrajectorySet, gt: TrajectorySet) -> np.ndarray:
    if pred.positions.shape != gt.positions.shape:
        raise InvalidInputError(f"prediction {pred.positions.shape} and ground truth {gt.positions.shape} differ")
    return np.linalg.norm(pred.positions - gt.positions, axis=-1)


def fit_alignment(pred: TrajectorySet, gt: TrajectorySet) -> Sim3Transform:
    """
    Similarity transform fitted on every valid, ground-truth-visible pair of the sequence.

    A degenerate fit (fewer than 3 pairs, collapsed prediction) falls back to
    the identity so the sequence is still scored.
    """
    mask = gt.valid & gt.visible()
    try:
        return umeyama_sim3(pred.positions[mask], gt.positions[mask])
    except DegenerateAlignmentError as e:
        logger.warning(f"Similarity fit failed, scoring without alignment: {e}")
        return Sim3Transform()


def align_pred(pred: TrajectorySet, gt: TrajectorySet) -> TrajectorySet:
    transform = fit_alignment(pred, gt)
    return pred.with_positions(transform.apply(pred.positions))


def apd3d(
    pred: TrajectorySet,
    gt: TrajectorySet,
    thresholds: Sequence[float] = METRIC_THRESHOLDS,
    include_occluded: bool = False,
) -> Tuple[float, List[float]]:
    """Fraction of pairs with end-point error below each threshold, and its mean."""
    errors = _errors(pred, gt)
    mask = gt.valid if include_occluded else gt.valid & gt.visible()
    fractions = [_fraction(errors < delta, mask) for delta in thresholds]
    return float(np.mean(fractions)), fractions


def occlusion_accuracy(pred: TrajectorySet, gt: TrajectorySet) -> float:
    if pred.visibility.shape != gt.visibility.shape:
        raise InvalidInputError(f"visibility shapes differ: {pred.visibility.shape} vs {gt.visibility.shape}")
    return _fraction(pred.visible() == gt.visible(), gt.valid)


def average_jaccard(
    pred: TrajectorySet,
    gt: TrajectorySet,
    thresholds: Sequence[float] = METRIC_THRESHOLDS,
) -> Tuple[float, List[float]]:
    """
    Mean over thresholds of TP / (TP + FP + FN).

    TP: predicted visible, visible, within threshold.
    FP: predicted visible and (occluded or too far).
    FN: visible and (predicted occluded or too far).
    An empty denominator scores 1.
    """
    errors = _errors(pred, gt)
    pred_vis, gt_vis, valid = pred.visible(), gt.visible(), gt.valid
    scores = []
    for delta in thresholds:
        within = errors < delta
        tp = np.count_nonzero(pred_vis & gt_vis & within & valid)
        fp = np.count_nonzero(pred_vis & (~gt_vis | ~within) & valid)
        fn = np.count_nonzero(gt_vis & (~pred_vis | ~within) & valid)
        denom = tp + fp + fn
        scores.append(1.0 if denom == 0 else tp / denom)
    return float(np.mean(scores)), scores


def compute_metrics(
    pred: TrajectorySet,
    gt: TrajectorySet,
    thresholds: Sequence[float] = METRIC_THRESHOLDS,
    include_occluded: bool = False,
    align: bool = True,
) -> EvalResult:
    """Align (optionally) and compute all three metrics."""
    transform = None
    if align:
        transform = fit_alignment(pred, gt)
        pred = pred.with_positions(transform.apply(pred.positions))
    aj, jaccards = average_jaccard(pred, gt, thresholds)
    apd, fractions = apd3d(pred, gt, thresholds, include_occluded)
    return EvalResult(
        average_jaccard=aj,
        apd3d=apd,
        occlusion_accuracy=occlusion_accuracy(pred, gt),
        thresholds=[float(t) for t in thresholds],
        jaccard_per_threshold=[float(j) for j in jaccards],
        apd_per_threshold=[float(f) for f in fractions],
        alignment=transform.to_dict() if transform is not None else None,
        num_points=gt.num_points,
        num_frames=gt.num_frames,
    )


def scene_scale(clip: TrackClip) -> float:
    """
    Max inlier distance from the centroid of the ground-truth tracks.

    Inliers are the [2%, 98%] percentile of distances from the centroid over
    every frame and every pixel with ground truth. Input geometry is not used,
    so corrupted reconstructions keep the thresholds of the clean clip.
    """
    points = clip.gt_track_pointmaps[:, clip.track_valid.astype(bool)].reshape(-1, 3)
    if points.shape[0] == 0:
        raise InvalidInputError(f"{clip.clip_id}: no ground-truth tracks to measure")
    inliers = points[percentile_inliers(np.linalg.norm(points - points.mean(axis=0), axis=-1))]
    return max(float(np.max(np.linalg.norm(inliers - inliers.mean(axis=0), axis=-1))), SCALE_EPS)


def clip_thresholds(clip: TrackClip, base: Sequence[float] = METRIC_THRESHOLDS) -> List[float]:
    """Thresholds in meters for metric clips, multiples of the scene scale otherwise."""
    if clip.units == "metric":
        return [float(t) for t in base]
    scale = scene_scale(clip)
    return [float(t) * scale for t in base]


def query_pixels(clip: TrackClip, query: Optional[QuerySpec] = None) -> np.ndarray:
    """Flat first-frame pixel indices to evaluate, restricted to pixels with ground truth."""
    query = query or QuerySpec()
    valid = clip.track_valid.copy()
    if query.mode == "dense":
        lattice = np.zeros_like(valid)
        lattice[:: query.grid_step, :: query.grid_step] = True
        return np.flatnonzero(valid & lattice)
    candidates = np.flatnonzero(valid)
    rng = np.random.default_rng(query.seed)
    picks = rng.choice(candidates.shape[0], size=min(query.num_points, candidates.shape[0]), replace=False)
    return np.sort(candidates[picks])


def trajectories(tracks: np.ndarray, visibility: np.ndarray, pixels: np.ndarray) -> TrajectorySet:
    """Per-pixel pointmaps (T, H, W, 3) and visibility (T, H, W) -> TrajectorySet over `pixels`."""
    tracks = np.asarray(tracks, dtype=np.float64)
    flat_tracks = rearrange(tracks, "t h w d -> (h w) t d")
    flat_vis = rearrange(np.asarray(visibility, dtype=np.float64), "t h w -> (h w) t")
    return TrajectorySet(flat_tracks[pixels], flat_vis[pixels])


def projection_visibility(tracks: np.ndarray, clip: TrackClip, tol: float = PROJECTION_VISIBILITY_TOL) -> np.ndarray:
    """Visibility of predicted tracks from the clip's input depths, for models without a visibility head."""
    return np.stack(
        [
            visibility_from_projection(Pointmap(tracks[j]), clip.depths[j], clip.cameras[j], tol).values
            for j in range(clip.num_frames)
        ]
    )


def evaluate(
    pred_tracks: np.ndarray,
    pred_visibility: np.ndarray,
    clip: TrackClip,
    query: Optional[QuerySpec] = None,
    include_occluded: bool = False,
    thresholds: Optional[Sequence[float]] = None,
) -> EvalResult:
    """
    Evaluate dense predictions against a clip's ground truth.

    Args:
        pred_tracks: (T, H, W, 3) predicted tracking pointmaps
        pred_visibility: (T, H, W) predicted visibility probabilities
        clip: Ground-truth clip
        query: Which first-frame pixels to score
        include_occluded: Score locations of occluded pairs too
        thresholds: Override thresholds (same units as the clip)

    Returns:
        EvalResult after Sim(3) alignment
    """
    expected = (clip.num_frames, clip.height, clip.width)
    if tuple(np.shape(pred_tracks)) != expected + (3,) or tuple(np.shape(pred_visibility)) != expected:
        raise InvalidInputError(
            f"predictions {np.shape(pred_tracks)}/{np.shape(pred_visibility)} do not match clip {expected}"
        )
    pixels = query_pixels(clip, query)
    if pixels.size == 0:
        raise InvalidInputError(f"{clip.clip_id}: no query pixels")
    gt = trajectories(clip.gt_track_pointmaps, clip.gt_visibility, pixels)
    pred = trajectories(pred_tracks, pred_visibility, pixels)
    thresholds = list(thresholds) if thresholds is not None else clip_thresholds(clip)
    result = compute_metrics(pred, gt, thresholds, include_occluded)
    logger.info(
        f"{clip.clip_id}: AJ={result.average_jaccard:.4f} APD3D={result.apd3d:.4f} "
        f"OA={result.occlusion_accuracy:.4f} over {pixels.size} points"
    )
    return result


def mean_result(results: Sequence[EvalResult]) -> EvalResult:
    """Unweighted mean of per-clip results."""
    if not results:
        raise InvalidInputError("no results to average")
    mean = lambda values: float(np.mean(values))
    return EvalResult(
        average_jaccard=mean([r.average_jaccard for r in results]),
        apd3d=mean([r.apd3d for r in results]),
        occlusion_accuracy=mean([r.occlusion_accuracy for r in results]),
        thresholds=list(results[0].thresholds),
        jaccard_per_threshold=np.mean([r.jaccard_per_threshold for r in results], axis=0).tolist(),
        apd_per_threshold=np.mean([r.apd_per_threshold for r in results], axis=0).tolist(),
        alignment=None,
        num_points=sum(r.num_points for r in results),
        num_frames=results[0].num_frames,
    )


def evaluate_many(
    predictions: Sequence[Tuple[np.ndarray, np.ndarray]],
    clips: Sequence[TrackClip],
    query: Optional[QuerySpec] = None,
    include_occluded: bool = False,
) -> EvalResult:
    """Evaluate each (tracks, visibility) against its clip and average in clip order."""
    if len(predictions) != len(clips):
        raise InvalidInputError(f"{len(predictions)} predictions for {len(clips)} clips")
    return mean_result([evaluate(t, v, c, query, include_occluded) for (t, v), c in zip(predictions, clips)])
