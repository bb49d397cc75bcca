"""
Synthetic dynamic scenes with analytic dense 3D trajectories.
Renders rigid spheres and boxes over a background plane by per-pixel ray casting
and derives exact tracking pointmaps and visibility from the known motion.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DEFAULT_IMAGE_SIZE, DEFAULT_NUM_FRAMES, DEFAULT_VISIBILITY_TOL
from ..errors import InvalidInputError
from .geometry import (
    CameraModel,
    Pointmap,
    rotation_from_axis_angle,
    unproject_to_world,
    visibility_from_projection,
)

logger = logging.getLogger(__name__)

NOISE_LATTICE = 16
MOTION_KINDS = ("static", "constant", "orbit", "oscillation")
CAMERA_KINDS = ("static", "linear", "orbit")
PRIMITIVE_KINDS = ("sphere", "box")


@dataclass
class MotionPath:
    """Translation of a primitive as a function of scene time (integer steps).

    constant: offset = velocity * tau
    orbit: circle of `radius` in the `plane` through the start position,
        angle = angular_speed * tau + phase
    oscillation: offset = amplitude * (sin(angular_speed * tau + phase) - sin(phase))
    """

    kind: str = "static"
    velocity: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    radius: float = 0.0
    angular_speed: float = 0.0
    phase: float = 0.0
    plane: str = "xy"
    amplitude: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def offset(self, tau: float) -> np.ndarray:
        if self.kind == "static":
            return np.zeros(3)
        if self.kind == "constant":
            return np.asarray(self.velocity, dtype=np.float64) * tau
        if self.kind == "orbit":
            angle = self.angular_speed * tau + self.phase
            a = self.radius * (np.cos(angle) - np.cos(self.phase))
            b = self.radius * (np.sin(angle) - np.sin(self.phase))
            axes = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}[self.plane]
            out = np.zeros(3)
            out[axes[0]] = a
            out[axes[1]] = b
            return out
        if self.kind == "oscillation":
            amp = np.asarray(self.amplitude, dtype=np.float64)
            return amp * (np.sin(self.angular_speed * tau + self.phase) - np.sin(self.phase))
        raise InvalidInputError(f"unknown motion kind '{self.kind}'")


@dataclass
class Primitive:
    """Rigid sphere (size = [radius]) or axis-aligned box (size = edge lengths)."""

    kind: str
    center: List[float]
    size: List[float]
    color: List[float] = field(default_factory=lambda: [0.8, 0.3, 0.2])
    motion: MotionPath = field(default_factory=MotionPath)

    def center_at(self, tau: float) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + self.motion.offset(tau)


@dataclass
class CameraPath:
    """Camera trajectory. The camera starts at `position` looking along +z.

    linear: position + velocity * tau, fixed orientation
    orbit: rotation about the vertical axis through `target` by angular_speed * tau
    """

    kind: str = "static"
    fx: float = 64.0
    fy: float = 64.0
    cx: float = 31.5
    cy: float = 31.5
    position: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    velocity: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    target: List[float] = field(default_factory=lambda: [0.0, 0.0, 4.0])
    angular_speed: float = 0.0

    def camera_at(self, tau: float) -> CameraModel:
        start = np.asarray(self.position, dtype=np.float64)
        if self.kind == "static":
            rotation, translation = np.eye(3), start
        elif self.kind == "linear":
            rotation, translation = np.eye(3), start + np.asarray(self.velocity, dtype=np.float64) * tau
        elif self.kind == "orbit":
            target = np.asarray(self.target, dtype=np.float64)
            rotation = rotation_from_axis_angle(np.array([0.0, self.angular_speed * tau, 0.0]))
            translation = target + rotation @ (start - target)
        else:
            raise InvalidInputError(f"unknown camera path kind '{self.kind}'")
        return CameraModel(self.fx, self.fy, self.cx, self.cy, rotation, translation)


@dataclass
class SceneSpec:
    """Full description of a synthetic scene; see docs/scene_spec.md."""

    width: int = DEFAULT_IMAGE_SIZE
    height: int = DEFAULT_IMAGE_SIZE
    num_frames: int = DEFAULT_NUM_FRAMES
    primitives: List[Primitive] = field(default_factory=list)
    camera: CameraPath = field(default_factory=CameraPath)
    background_depth: float = 6.0
    background_color: List[float] = field(default_factory=lambda: [0.55, 0.55, 0.6])
    visibility_tol: float = DEFAULT_VISIBILITY_TOL
    units: str = "scene"
    strides: Optional[List[int]] = None
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneSpec":
        data = dict(data)
        primitives = []
        for prim in data.pop("primitives", []):
            prim = dict(prim)
            motion = MotionPath(**prim.pop("motion", {}))
            primitives.append(Primitive(motion=motion, **prim))
        camera = CameraPath(**data.pop("camera", {}))
        return cls(primitives=primitives, camera=camera, **data)


@dataclass
class TrackClip:
    """
    One training / evaluation sample.

    Arrays are indexed by clip frame j = 0..T-1. `frame_times` holds the scene
    time of each frame, so frames are `stride` scene steps apart.
    """

    frames: np.ndarray
    depths: np.ndarray
    cameras: List[CameraModel]
    recon_pointmaps: np.ndarray
    gt_track_pointmaps: np.ndarray
    gt_visibility: np.ndarray
    stride: int = 1
    track_valid: Optional[np.ndarray] = None
    frame_times: Optional[np.ndarray] = None
    clip_id: str = "clip"
    units: str = "scene"
    spec: Optional[SceneSpec] = None

    def __post_init__(self):
        if self.track_valid is None:
            self.track_valid = np.ones(self.depths.shape[1:], dtype=bool)
        if self.frame_times is None:
            self.frame_times = np.arange(self.num_frames, dtype=np.float64) * self.stride

    @property
    def num_frames(self) -> int:
        return self.depths.shape[0]

    @property
    def height(self) -> int:
        return self.depths.shape[1]

    @property
    def width(self) -> int:
        return self.depths.shape[2]

    def recon(self, j: int) -> Pointmap:
        return Pointmap(self.recon_pointmaps[j], frame_index=j, timestamp_index=j)

    def track(self, j: int) -> Pointmap:
        return Pointmap(self.gt_track_pointmaps[j], frame_index=0, timestamp_index=j)

    def subsample(self, indices: Sequence[int]) -> "TrackClip":
        """Clip restricted to `indices`; the first index must be 0 (the reference frame)."""
        indices = list(indices)
        if not indices or indices[0] != 0:
            raise InvalidInputError("subsampled clips must keep frame 0 first")
        steps = np.diff(indices)
        stride = self.stride * int(steps[0]) if len(steps) and np.all(steps == steps[0]) else self.stride
        return replace(
            self,
            frames=self.frames[indices],
            depths=self.depths[indices],
            cameras=[self.cameras[i] for i in indices],
            recon_pointmaps=self.recon_pointmaps[indices],
            gt_track_pointmaps=self.gt_track_pointmaps[indices],
            gt_visibility=self.gt_visibility[indices],
            frame_times=self.frame_times[indices],
            stride=stride,
        )

    def check_invariants(self):
        """Raise InvalidInputError unless the clip is internally consistent."""
        T, H, W = self.depths.shape
        shapes = {
            "frames": (self.frames.shape, (T, H, W, 3)),
            "recon_pointmaps": (self.recon_pointmaps.shape, (T, H, W, 3)),
            "gt_track_pointmaps": (self.gt_track_pointmaps.shape, (T, H, W, 3)),
            "gt_visibility": (self.gt_visibility.shape, (T, H, W)),
            "track_valid": (self.track_valid.shape, (H, W)),
        }
        for name, (got, want) in shapes.items():
            if tuple(got) != want:
                raise InvalidInputError(f"{self.clip_id}: {name} has shape {got}, expected {want}")
        if len(self.cameras) != T:
            raise InvalidInputError(f"{self.clip_id}: {len(self.cameras)} cameras for {T} frames")
        for j in range(T):
            expected = unproject_to_world(self.depths[j], self.cameras[j]).points
            if not np.array_equal(expected, self.recon_pointmaps[j]):
                raise InvalidInputError(f"{self.clip_id}: recon pointmap {j} does not match depth and camera")
        if not np.array_equal(self.gt_track_pointmaps[0], self.recon_pointmaps[0]):
            raise InvalidInputError(f"{self.clip_id}: first tracking pointmap differs from reconstruction")
        if not np.all(self.gt_visibility[0] == 1.0):
            raise InvalidInputError(f"{self.clip_id}: reference frame is not fully visible")
        if not np.all(np.isin(self.gt_visibility, (0.0, 1.0))):
            raise InvalidInputError(f"{self.clip_id}: ground-truth visibility is not binary")


def _value_noise(points: np.ndarray, table: np.ndarray, frequency: float) -> np.ndarray:
    """Trilinear value noise on a periodic lattice, values in [0, 1]."""
    q = points * frequency
    base = np.floor(q)
    f = q - base
    f = f * f * (3.0 - 2.0 * f)
    base = base.astype(np.int64)
    n = table.shape[0]
    out = np.zeros(points.shape[:-1])
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (f[..., 0] if dx else 1.0 - f[..., 0])
                    * (f[..., 1] if dy else 1.0 - f[..., 1])
                    * (f[..., 2] if dz else 1.0 - f[..., 2])
                )
                out += w * table[(base[..., 0] + dx) % n, (base[..., 1] + dy) % n, (base[..., 2] + dz) % n]
    return out


def _intersect_sphere(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Ray parameter of the nearest hit in front of the origin, inf on miss."""
    oc = origin - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * dirs @ oc
    c = float(oc @ oc) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    s = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2.0 * a), np.inf)
    return np.where(s > 0.0, s, np.inf)


def _intersect_box(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, size: np.ndarray) -> np.ndarray:
    """Slab test against an axis-aligned box; inf on miss."""
    lo = center - size / 2.0
    hi = center + size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    t1 = np.nan_to_num(t1, nan=-np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    near = np.max(np.minimum(t1, t2), axis=-1)
    far = np.min(np.maximum(t1, t2), axis=-1)
    hit = (near <= far) & (near > 0.0)
    return np.where(hit, near, np.inf)


class SceneRenderer:
    """Ray-casting renderer for one SceneSpec."""

    def __init__(self, spec: SceneSpec):
        """Validate the spec and prepare per-surface noise tables."""
        validate_spec(spec)
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        # one table per primitive plus the background
        self.noise_tables = [
            rng.random((NOISE_LATTICE, NOISE_LATTICE, NOISE_LATTICE)) for _ in range(len(spec.primitives) + 1)
        ]

    def _rays(self, camera: CameraModel) -> np.ndarray:
        u, v = np.meshgrid(np.arange(self.spec.width, dtype=np.float64), np.arange(self.spec.height, dtype=np.float64))
        d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
        # world-space direction whose camera-z component is 1: the hit parameter is the depth
        return d_cam @ camera.rotation.T

    def render(self, tau: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, CameraModel]:
        """
        Render the scene at scene time `tau`.

        Returns:
            (color H x W x 3, depth H x W, owner H x W with -1 for background, camera)
        """
        spec = self.spec
        camera = spec.camera.camera_at(tau)
        origin = camera.translation
        dirs = self._rays(camera)

        with np.errstate(divide="ignore"):
            depth = (spec.background_depth - origin[2]) / dirs[..., 2]
        if np.any(~np.isfinite(depth)) or np.any(depth <= 0.0):
            raise InvalidInputError(f"camera at tau={tau} sees past the background plane")
        owner = np.full(depth.shape, -1, dtype=np.int64)

        for k, prim in enumerate(spec.primitives):
            center = prim.center_at(tau)
            if prim.kind == "sphere":
                s = _intersect_sphere(origin, dirs, center, float(prim.size[0]))
            else:
                s = _intersect_box(origin, dirs, center, np.asarray(prim.size, dtype=np.float64))
            nearer = s < depth
            depth = np.where(nearer, s, depth)
            owner = np.where(nearer, k, owner)

        hits = origin + dirs * depth[..., None]
        color = np.empty(depth.shape + (3,))
        background = owner < 0
        noise = _value_noise(hits[background], self.noise_tables[-1], frequency=2.0)
        color[background] = np.asarray(spec.background_color) * (0.55 + 0.45 * noise[:, None])
        for k, prim in enumerate(spec.primitives):
            mask = owner == k
            if not np.any(mask):
                continue
            local = hits[mask] - prim.center_at(tau)
            noise = _value_noise(local, self.noise_tables[k], frequency=6.0)
            color[mask] = np.asarray(prim.color) * (0.55 + 0.45 * noise[:, None])
        return np.clip(color, 0.0, 1.0), depth, owner, camera


def validate_spec(spec: SceneSpec):
    """Raise InvalidInputError for a spec that cannot be rendered."""
    if spec.num_frames < 2:
        raise InvalidInputError(f"scene needs at least 2 frames (F >= 1), got {spec.num_frames}")
    if spec.width < 1 or spec.height < 1:
        raise InvalidInputError(f"invalid image size {spec.width}x{spec.height}")
    if spec.camera.kind not in CAMERA_KINDS:
        raise InvalidInputError(f"unknown camera path kind '{spec.camera.kind}'")
    if spec.units not in ("scene", "metric"):
        raise InvalidInputError(f"units must be 'scene' or 'metric', got '{spec.units}'")
    for k, prim in enumerate(spec.primitives):
        if prim.kind not in PRIMITIVE_KINDS:
            raise InvalidInputError(f"primitive {k}: unknown kind '{prim.kind}'")
        if prim.motion.kind not in MOTION_KINDS:
            raise InvalidInputError(f"primitive {k}: unknown motion kind '{prim.motion.kind}'")
        expected = 1 if prim.kind == "sphere" else 3
        if len(prim.size) != expected or min(prim.size) <= 0:
            raise InvalidInputError(f"primitive {k}: {prim.kind} needs {expected} positive size values")


def generate_clip(spec: SceneSpec, stride: int = 1, clip_id: Optional[str] = None) -> TrackClip:
    """
    Render a clip with analytic ground truth.

    Frame j is rendered at scene time j * stride. Every first-frame pixel is
    owned by a primitive (or the static background); its tracking position at
    frame j is its reference position moved by the owner's translation.

    Args:
        spec: Scene description
        stride: Scene steps between consecutive frames
        clip_id: Identifier stored on the clip

    Returns:
        The generated clip

    Raises:
        InvalidInputError: If the spec violates its invariants
    """
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    renderer = SceneRenderer(spec)
    times = np.arange(spec.num_frames, dtype=np.float64) * stride

    frames, depths, cameras, owners = [], [], [], []
    for tau in times:
        color, depth, owner, camera = renderer.render(tau)
        frames.append(color)
        depths.append(depth)
        cameras.append(camera)
        owners.append(owner)

    owner0 = owners[0]
    for k in range(len(spec.primitives)):
        if not np.any(owner0 == k):
            raise InvalidInputError(f"primitive {k} is not visible in the first frame")

    recon = np.stack([unproject_to_world(d, cam, j).points for j, (d, cam) in enumerate(zip(depths, cameras))])
    tracks = np.empty_like(recon)
    visibility = np.empty(recon.shape[:-1])
    for j, tau in enumerate(times):
        displacement = np.zeros(owner0.shape + (3,))
        for k, prim in enumerate(spec.primitives):
            displacement[owner0 == k] = prim.motion.offset(tau)
        tracks[j] = recon[0] + displacement
        if j == 0:
            visibility[j] = 1.0
        else:
            visibility[j] = visibility_from_projection(
                Pointmap(tracks[j], 0, j), depths[j], cameras[j], tol=spec.visibility_tol
            ).values

    clip = TrackClip(
        frames=np.stack(frames),
        depths=np.stack(depths),
        cameras=cameras,
        recon_pointmaps=recon,
        gt_track_pointmaps=tracks,
        gt_visibility=visibility,
        stride=stride,
        frame_times=times,
        clip_id=clip_id or f"scene{spec.seed}_s{stride}",
        units=spec.units,
        spec=spec,
    )
    logger.info(
        f"Generated clip {clip.clip_id}: {clip.num_frames} frames, {len(spec.primitives)} primitives, "
        f"visible fraction {visibility.mean():.3f}"
    )
    return clip


def perturb_geometry(
    clip: TrackClip,
    depth_noise_rel: float,
    pose_noise: Tuple[float, float] = (0.0, 0.0),
    seed: int = 0,
) -> TrackClip:
    """
    Copy of a clip whose input geometry models an imperfect estimator.

    Depths are multiplied by (1 + n) with n ~ N(0, depth_noise_rel) clamped to
    +-3 sigma; poses get a random rotation (axis-angle ~ N(0, rot)) and
    translation (~ N(0, trans)). Reconstruction pointmaps are recomputed from
    the noised depths and poses, which replace `depths` and `cameras`; ground
    truth tracks and visibility are untouched.

    Args:
        clip: Clip to perturb
        depth_noise_rel: Relative depth noise sigma
        pose_noise: (rotation sigma in radians, translation sigma in meters)
        seed: Noise seed

    Returns:
        The perturbed copy
    """
    rot_sigma, trans_sigma = pose_noise
    rng = np.random.default_rng(seed)
    depths = np.empty_like(clip.depths)
    cameras = []
    for j in range(clip.num_frames):
        noise = rng.normal(0.0, depth_noise_rel, clip.depths[j].shape)
        noise = np.clip(noise, -3.0 * depth_noise_rel, 3.0 * depth_noise_rel)
        depths[j] = clip.depths[j] * (1.0 + noise)
        cam = clip.cameras[j]
        delta_r = rotation_from_axis_angle(rng.normal(0.0, rot_sigma, 3))
        delta_t = rng.normal(0.0, trans_sigma, 3)
        cameras.append(cam.with_pose(delta_r @ cam.rotation, cam.translation + delta_t))

    recon = np.stack([unproject_to_world(d, cam, j).points for j, (d, cam) in enumerate(zip(depths, cameras))])
    return replace(
        clip,
        depths=depths,
        cameras=cameras,
        recon_pointmaps=recon,
        gt_track_pointmaps=clip.gt_track_pointmaps.copy(),
        gt_visibility=clip.gt_visibility.copy(),
        frames=clip.frames.copy(),
    )


def sparsify_tracks(clip: TrackClip, num_points: int, seed: int = 0) -> TrackClip:
    """Copy of a clip whose ground truth is only valid at `num_points` random pixels."""
    rng = np.random.default_rng(seed)
    total = clip.height * clip.width
    chosen = rng.choice(total, size=min(num_points, total), replace=False)
    valid = np.zeros(total, dtype=bool)
    valid[chosen] = True
    return replace(clip, track_valid=valid.reshape(clip.height, clip.width))


def draw_training_choice(
    library: List[SceneSpec], strides: Sequence[int], rng: np.random.Generator
) -> Tuple[SceneSpec, int]:
    """
    Draw a scene and a temporal stride uniformly.

    A spec with its own `strides` list uses it instead of the shared one.
    """
    if not library:
        raise InvalidInputError("scene library is empty")
    spec = library[int(rng.integers(len(library)))]
    choices = list(spec.strides or strides)
    if not choices:
        raise InvalidInputError("no strides to sample from")
    return spec, int(choices[int(rng.integers(len(choices)))])


def sample_training_clip(library: List[SceneSpec], strides: Sequence[int], seed: int) -> TrackClip:
    """Render the clip of one `draw_training_choice` draw."""
    spec, stride = draw_training_choice(library, strides, np.random.default_rng(seed))
    return generate_clip(spec, stride=stride)


def random_scene_spec(
    seed: int,
    width: int = DEFAULT_IMAGE_SIZE,
    height: int = DEFAULT_IMAGE_SIZE,
    num_frames: int = DEFAULT_NUM_FRAMES,
    num_primitives: Tuple[int, int] = (1, 3),
    static_objects: bool = False,
    max_speed: float = 0.05,
    camera_kinds: Optional[Sequence[str]] = None,
) -> SceneSpec:
    """
    Random desk-scale scene: primitives 2-4 m in front of the camera, a
    background plane at 6 m, small motions per scene step.

    With `static_objects` the primitives do not move and the camera follows a
    linear or orbit path instead (camera-motion-only scenes). Primitives fully
    hidden in the first frame are left out.
    """
    rng = np.random.default_rng(seed)
    fx = fy = float(width)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0

    primitives = []
    for _ in range(int(rng.integers(num_primitives[0], num_primitives[1] + 1))):
        z = float(rng.uniform(2.5, 4.0))
        u = float(rng.uniform(0.3, 0.7) * width)
        v = float(rng.uniform(0.3, 0.7) * height)
        center = [(u - cx) * z / fx, (v - cy) * z / fy, z]
        kind = "sphere" if rng.random() < 0.5 else "box"
        size = [float(rng.uniform(0.3, 0.6))] if kind == "sphere" else rng.uniform(0.4, 0.9, 3).tolist()
        color = rng.uniform(0.2, 1.0, 3).tolist()

        if static_objects:
            motion = MotionPath()
        else:
            motion_kind = ["constant", "orbit", "oscillation"][int(rng.integers(3))]
            if motion_kind == "constant":
                velocity = rng.uniform(-max_speed, max_speed, 3)
                velocity[2] *= 0.3
                motion = MotionPath(kind="constant", velocity=velocity.tolist())
            elif motion_kind == "orbit":
                radius = float(rng.uniform(0.2, 0.5))
                motion = MotionPath(
                    kind="orbit",
                    radius=radius,
                    angular_speed=float(rng.uniform(0.5, 1.0) * max_speed / radius * rng.choice([-1, 1])),
                    phase=float(rng.uniform(0, 2 * np.pi)),
                    plane="xy",
                )
            else:
                motion = MotionPath(
                    kind="oscillation",
                    amplitude=(rng.uniform(-0.4, 0.4, 3) * np.array([1.0, 1.0, 0.3])).tolist(),
                    angular_speed=float(rng.uniform(0.1, 0.3)),
                    phase=float(rng.uniform(0, 2 * np.pi)),
                )
        primitives.append(Primitive(kind=kind, center=center, size=size, color=color, motion=motion))

    if camera_kinds is None:
        camera_kinds = ["linear", "orbit"] if static_objects else ["static", "static", "linear", "orbit"]
    camera_kinds = list(camera_kinds)
    camera_kind = camera_kinds[int(rng.integers(len(camera_kinds)))]
    camera = CameraPath(kind=camera_kind, fx=fx, fy=fy, cx=cx, cy=cy)
    if camera_kind == "linear":
        velocity = rng.uniform(-0.5 * max_speed, 0.5 * max_speed, 3)
        velocity[2] = 0.0
        camera.velocity = velocity.tolist()
    elif camera_kind == "orbit":
        camera.target = [0.0, 0.0, 3.5]
        camera.angular_speed = float(rng.uniform(-0.01, 0.01))

    spec = SceneSpec(
        width=width,
        height=height,
        num_frames=num_frames,
        primitives=primitives,
        camera=camera,
        background_depth=6.0,
        seed=seed,
    )
    # drop primitives hidden behind nearer ones in the first frame
    _, _, owner, _ = SceneRenderer(spec).render(0.0)
    shown = [prim for k, prim in enumerate(primitives) if np.any(owner == k)]
    if len(shown) < len(primitives):
        logger.debug(f"Scene {seed}: dropped {len(primitives) - len(shown)} hidden primitives")
        spec.primitives = shown
    return spec


def scene_library(
    count: int,
    seed: int,
    static_fraction: float = 0.25,
    **kwargs,
) -> List[SceneSpec]:
    """`count` random specs with seeds seed..seed+count-1; a fraction has static objects."""
    rng = np.random.default_rng(seed)
    library = []
    for i in range(count):
        static = bool(rng.random() < static_fraction)
        library.append(random_scene_spec(seed + i, static_objects=static, **kwargs))
    return library
