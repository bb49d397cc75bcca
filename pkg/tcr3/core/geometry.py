"""
Pointmap algebra for the tracker.
Provides unprojection, projection, normalization, residual tracks,
similarity alignment and projection-based visibility.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DegenerateAlignmentError, InvalidInputError

logger = logging.getLogger(__name__)

SCALE_EPS = 1e-6
PERCENTILE_RANGE = (2.0, 98.0)
ORTHONORMAL_TOL = 1e-9
# round-off allowance on the lower image bounds (pixels)
PIXEL_SLACK = 1e-9


def _check_rotation(rotation: np.ndarray, name: str = "rotation"):
    if rotation.shape != (3, 3):
        raise InvalidInputError(f"{name} must be 3x3, got {rotation.shape}")
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=ORTHONORMAL_TOL, rtol=0.0):
        raise InvalidInputError(f"{name} is not orthonormal")
    if np.linalg.det(rotation) < 0:
        raise InvalidInputError(f"{name} has det -1")


@dataclass
class Pointmap:
    """H x W grid of world-coordinate points (meters).

    `frame_index` is the frame whose content the points describe and
    `timestamp_index` the time at which they are observed, so reconstruction
    pointmaps have both equal to j and tracking pointmaps have frame_index 0.
    """

    points: np.ndarray
    frame_index: int = 0
    timestamp_index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points)
        if self.points.ndim != 3 or self.points.shape[-1] != 3:
            raise InvalidInputError(f"pointmap must be HxWx3, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise InvalidInputError("pointmap has non-finite coordinates")

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


@dataclass
class VisibilityMap:
    """H x W visibility probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise InvalidInputError("visibility values must lie in [0, 1]")


@dataclass
class CameraModel:
    """Pinhole camera with a world-from-camera rigid pose.

    `world_id` names the world frame the pose is expressed in; pointmaps
    from cameras with different ids cannot be mixed.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    world_id: str = "world"

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        _check_rotation(self.rotation)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraModel":
        return CameraModel(self.fx, self.fy, self.cx, self.cy, rotation, translation, self.world_id)


@dataclass
class NormalizationStats:
    """Mean and max-distance scale of the inlier points."""

    mean: np.ndarray
    scale: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if self.scale < SCALE_EPS:
            raise InvalidInputError(f"normalization scale {self.scale} below floor {SCALE_EPS}")


@dataclass
class Sim3Transform:
    """Similarity transform x -> s * R x + t."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise InvalidInputError(f"similarity scale must be positive, got {self.scale}")
        _check_rotation(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (..., 3) array of points."""
        return self.scale * points @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "scale": float(self.scale),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }


def rotation_from_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula; the zero vector maps to the exact identity."""
    axis_angle = np.asarray(axis_angle, dtype=np.float64)
    angle = float(np.linalg.norm(axis_angle))
    if angle == 0.0:
        return np.eye(3)
    k = axis_angle / angle
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Integer pixel coordinates (u = column, v = row) as float arrays of shape (H, W)."""
    v, u = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    return u, v


def unproject_to_world(depth: np.ndarray, camera: CameraModel, frame_index: int = 0) -> Pointmap:
    """
    Lift a depth map to a world-coordinate pointmap.

    Args:
        depth: H x W depth map in meters (camera-frame z)
        camera: Camera intrinsics and world-from-camera pose
        frame_index: Frame index recorded on the pointmap (both content and time)

    Returns:
        Reconstruction pointmap for the frame

    Raises:
        InvalidInputError: If the depth map contains non-finite values
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise InvalidInputError(f"depth must be HxW, got {depth.shape}")
    if not np.all(np.isfinite(depth)):
        raise InvalidInputError("depth map has non-finite values")

    u, v = pixel_grid(*depth.shape)
    cam_points = np.stack(
        [(u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy, depth],
        axis=-1,
    )
    world = cam_points @ camera.rotation.T + camera.translation
    return Pointmap(world, frame_index=frame_index, timestamp_index=frame_index)


def project_points(points: np.ndarray, camera: CameraModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized pinhole projection of (..., 3) world points.

    Returns (u, v, z, in_front) where in_front is False for z <= 0; u and v
    are NaN behind the camera.
    """
    points = np.asarray(points, dtype=np.float64)
    cam = (points - camera.translation) @ camera.rotation
    z = cam[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    u = np.where(in_front, camera.fx * cam[..., 0] / safe_z + camera.cx, np.nan)
    v = np.where(in_front, camera.fy * cam[..., 1] / safe_z + camera.cy, np.nan)
    return u, v, z, in_front


def project_to_image(point: Sequence[float], camera: CameraModel) -> Tuple[float, float, float, bool]:
    """
    Project a single world point into the image.

    Args:
        point: 3-vector in world coordinates
        camera: Camera to project into

    Returns:
        (u, v, depth, in_front); in_front is False when the point is behind
        the camera, which downstream code treats as occluded
    """
    u, v, z, in_front = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), camera)
    return float(u[0]), float(v[0]), float(z[0]), bool(in_front[0])


def percentile_inliers(depths: np.ndarray, low: float = PERCENTILE_RANGE[0], high: float = PERCENTILE_RANGE[1]) -> np.ndarray:
    """Mask of depths inside the linear-interpolated [low, high] percentile interval."""
    depths = np.asarray(depths, dtype=np.float64)
    lo, hi = np.percentile(depths, [low, high])
    return (depths >= lo) & (depths <= hi)


def compute_normalization(pointmaps: List[Pointmap], depths: List[np.ndarray]) -> NormalizationStats:
    """
    Compute mean and max-distance scale over percentile inliers of all frames.

    Inliers are pixels whose depth lies in the [2%, 98%] percentile range of
    the depths of every frame together.

    Args:
        pointmaps: Reconstruction pointmaps
        depths: Matching H x W depth maps

    Returns:
        Normalization statistics (scale floored at 1e-6)
    """
    if not pointmaps or len(pointmaps) != len(depths):
        raise InvalidInputError("compute_normalization needs matching, non-empty pointmaps and depths")

    points = np.concatenate([pm.points.reshape(-1, 3) for pm in pointmaps], axis=0)
    all_depths = np.concatenate([np.asarray(d, dtype=np.float64).reshape(-1) for d in depths], axis=0)
    if points.shape[0] != all_depths.shape[0]:
        raise InvalidInputError("pointmap and depth sizes differ")

    inliers = points[percentile_inliers(all_depths)]
    if inliers.shape[0] == 0:
        raise InvalidInputError("no pixel survives the percentile filter")

    mean = inliers.mean(axis=0)
    scale = float(np.max(np.linalg.norm(inliers - mean, axis=-1)))
    if scale < SCALE_EPS:
        logger.warning(f"Degenerate point cloud (spread {scale:.3g}), flooring scale at {SCALE_EPS}")
        scale = SCALE_EPS
    return NormalizationStats(mean=mean, scale=scale)


def normalize(pm: Pointmap, stats: NormalizationStats) -> Pointmap:
    return Pointmap((pm.points - stats.mean) / stats.scale, pm.frame_index, pm.timestamp_index)


def denormalize(pm: Pointmap, stats: NormalizationStats) -> Pointmap:
    return Pointmap(pm.points * stats.scale + stats.mean, pm.frame_index, pm.timestamp_index)


def residual_from_tracks(track: Pointmap, reference: Pointmap) -> np.ndarray:
    """Displacement of every tracked point from its reference-frame position."""
    if track.points.shape != reference.points.shape:
        raise InvalidInputError(f"track {track.points.shape} and reference {reference.points.shape} differ")
    return track.points - reference.points


def recover_tracks(reference: Pointmap, residual: np.ndarray, timestamp_index: int = 0) -> Pointmap:
    residual = np.asarray(residual)
    if residual.shape != reference.points.shape:
        raise InvalidInputError(f"residual {residual.shape} and reference {reference.points.shape} differ")
    return Pointmap(reference.points + residual, frame_index=reference.frame_index, timestamp_index=timestamp_index)


def umeyama_sim3(pred: np.ndarray, gt: np.ndarray, weights: Optional[np.ndarray] = None) -> Sim3Transform:
    """
    Least-squares similarity transform mapping `pred` onto `gt`.

    Minimizes sum_i w_i * ||s R pred_i + t - gt_i||^2 with det(R) = +1.

    Args:
        pred: N x 3 source points
        gt: N x 3 target points
        weights: Optional non-negative per-point weights

    Returns:
        The fitted transform

    Raises:
        DegenerateAlignmentError: If fewer than 3 points carry weight or the
            points are (near) collinear
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise InvalidInputError(f"point sets must both be Nx3, got {pred.shape} and {gt.shape}")

    w = np.ones(pred.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != pred.shape[0] or np.any(w < 0):
        raise InvalidInputError("weights must be non-negative with one entry per point")
    if np.count_nonzero(w) < 3:
        raise DegenerateAlignmentError(f"need at least 3 weighted points, got {np.count_nonzero(w)}")
    w = w / w.sum()

    mu_pred = w @ pred
    mu_gt = w @ gt
    pred_c = pred - mu_pred
    gt_c = gt - mu_gt

    cov = (gt_c * w[:, None]).T @ pred_c
    var_pred = float(w @ np.sum(pred_c**2, axis=1))
    U, D, Vt = np.linalg.svd(cov)
    if var_pred <= 0.0 or D[1] <= 1e-12 * max(D[0], 1e-300):
        raise DegenerateAlignmentError("rank-deficient covariance in similarity fit", D.tolist())

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0

    rotation = U @ S @ Vt
    scale = float(np.trace(np.diag(D) @ S) / var_pred)
    translation = mu_gt - scale * rotation @ mu_pred
    return Sim3Transform(scale=scale, rotation=rotation, translation=translation)


def visibility_from_projection(
    track: Pointmap,
    depth: np.ndarray,
    camera: CameraModel,
    tol: float = 0.10,
) -> VisibilityMap:
    """
    Binary visibility of tracked points by projecting into a frame's depth map.

    A point is visible if its projection (u, v) lies inside [0, W) x [0, H)
    and |z_proj - depth| <= tol * depth at the rounded pixel. Points behind
    the camera or outside the image are occluded. Pixel centers on the
    first row or column that reproject to a hair below 0 count as inside.

    Args:
        track: Tracking pointmap at the frame's timestamp
        depth: H x W depth map of that frame
        camera: Camera of that frame
        tol: Relative depth tolerance

    Returns:
        Binary visibility map (values 0 or 1)
    """
    depth = np.asarray(depth, dtype=np.float64)
    height, width = depth.shape
    u, v, z, in_front = project_points(track.points, camera)

    u = np.where(in_front, np.nan_to_num(u, nan=-1.0), -1.0)
    v = np.where(in_front, np.nan_to_num(v, nan=-1.0), -1.0)
    inside = in_front & (u >= -PIXEL_SLACK) & (u < width) & (v >= -PIXEL_SLACK) & (v < height)

    ui = np.clip(np.rint(u), 0, width - 1).astype(np.int64)
    vi = np.clip(np.rint(v), 0, height - 1).astype(np.int64)
    buffer = depth[vi, ui]
    close = np.abs(z - buffer) <= tol * buffer
    return VisibilityMap((inside & close).astype(np.float64))
