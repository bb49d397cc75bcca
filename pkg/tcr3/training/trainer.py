"""
Regression training for the tracking network.

Loss is MSE on normalized residual tracks plus a weighted BCE on visibility,
optimized with AdamW at a constant learning rate. Clips are drawn from a fixed
pool and subsampled at a random temporal stride for every step.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..config import DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_SEED, DEFAULT_VIS_WEIGHT
from ..core.geometry import NormalizationStats, compute_normalization
from ..core.synthscene import TrackClip
from ..errors import InvalidInputError, NonFiniteError
from ..model.pipeline import TrackingNetwork

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
TRAIN_GROUPS = ("adapters", "all")


@dataclass
class TrainConfig:
    """Optimizer, loss and sampling settings."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    steps: int = 1000
    vis_weight: float = DEFAULT_VIS_WEIGHT
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    seed: int = DEFAULT_SEED
    train_groups: str = "all"
    freeze_codec: bool = False
    codec_lr_scale: float = 1.0
    mask_occluded_mse: bool = False
    strides: List[int] = field(default_factory=lambda: [1])
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidInputError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.vis_weight < 0:
            raise InvalidInputError(f"visibility loss weight must be non-negative, got {self.vis_weight}")
        if self.train_groups not in TRAIN_GROUPS:
            raise InvalidInputError(f"train_groups must be one of {TRAIN_GROUPS}, got {self.train_groups!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise InvalidInputError("batch_size must be >= 1 and steps >= 0")
        if not self.strides or min(self.strides) < 1:
            raise InvalidInputError(f"strides must be a non-empty list of positive integers, got {self.strides}")
        self.betas = tuple(float(b) for b in self.betas)
        self.strides = [int(s) for s in self.strides]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        return cls(**data)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    mse: torch.Tensor
    bce: torch.Tensor


@dataclass
class PreparedClip:
    """Network-ready tensors of one clip plus the statistics used to build them."""

    clip_id: str
    frames: torch.Tensor
    pointmaps: torch.Tensor
    target: torch.Tensor
    visibility: torch.Tensor
    valid: torch.Tensor
    stats: NormalizationStats


@dataclass
class StepRecord:
    step: int
    loss: float
    mse: float
    bce: float
    wall_time: float
    clip_ids: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _masked_mean(values: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    weights = weights.expand_as(values).to(values.dtype)
    denom = weights.sum()
    if denom == 0:
        return values.sum() * 0.0
    return (values * weights).sum() / denom


def tracking_loss(
    pred_tracks: torch.Tensor,
    target_tracks: torch.Tensor,
    pred_visibility: torch.Tensor,
    gt_visibility: torch.Tensor,
    vis_weight: float = DEFAULT_VIS_WEIGHT,
    valid: Optional[torch.Tensor] = None,
    mask_occluded: bool = False,
) -> LossBreakdown:
    """
    MSE over residual components plus vis_weight times mean BCE.

    Args:
        pred_tracks: (..., T, H, W, 3) predicted residuals (normalized space)
        target_tracks: Matching targets
        pred_visibility: (..., T, H, W) probabilities
        gt_visibility: (..., T, H, W) labels in {0, 1}
        vis_weight: BCE weight
        valid: Optional (H, W) mask of pixels with ground truth
        mask_occluded: Drop occluded (point, frame) pairs from the MSE

    Returns:
        LossBreakdown with the total and both terms
    """
    if pred_tracks.shape != target_tracks.shape or pred_visibility.shape != gt_visibility.shape:
        raise InvalidInputError(
            f"loss shape mismatch: tracks {tuple(pred_tracks.shape)} vs {tuple(target_tracks.shape)}, "
            f"visibility {tuple(pred_visibility.shape)} vs {tuple(gt_visibility.shape)}"
        )
    gt_visibility = gt_visibility.to(pred_visibility.dtype)
    pixel_weight = torch.ones_like(gt_visibility) if valid is None else valid.to(gt_visibility.dtype).expand_as(gt_visibility)

    mse_weight = pixel_weight * gt_visibility if mask_occluded else pixel_weight
    mse = _masked_mean((pred_tracks - target_tracks) ** 2, mse_weight[..., None])

    p = pred_visibility.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce_map = -(gt_visibility * torch.log(p) + (1.0 - gt_visibility) * torch.log(1.0 - p))
    bce = _masked_mean(bce_map, pixel_weight)
    return LossBreakdown(total=mse + vis_weight * bce, mse=mse, bce=bce)


def prepare_clip(
    clip: TrackClip,
    residual_head: bool = True,
    dtype: torch.dtype = torch.float32,
    stats: Optional[NormalizationStats] = None,
) -> PreparedClip:
    """
    Normalize a clip's reconstruction and build its regression target.

    The target is the displacement from the reference reconstruction divided
    by the normalization scale, or the normalized tracking pointmap itself
    when the residual head is off.
    """
    if stats is None:
        stats = compute_normalization([clip.recon(j) for j in range(clip.num_frames)], list(clip.depths))
    recon = (clip.recon_pointmaps - stats.mean) / stats.scale
    if residual_head:
        target = (clip.gt_track_pointmaps - clip.recon_pointmaps[0]) / stats.scale
    else:
        target = (clip.gt_track_pointmaps - stats.mean) / stats.scale
    as_tensor = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)
    return PreparedClip(
        clip_id=clip.clip_id,
        frames=as_tensor(clip.frames),
        pointmaps=as_tensor(recon),
        target=as_tensor(target),
        visibility=as_tensor(clip.gt_visibility),
        valid=torch.as_tensor(clip.track_valid, dtype=torch.bool),
        stats=stats,
    )


def clip_loss(network: TrackingNetwork, prepared: PreparedClip, config: TrainConfig) -> LossBreakdown:
    """Forward one prepared clip and score it."""
    out = network(prepared.frames[None], prepared.pointmaps[None])
    return tracking_loss(
        out.tracks[0],
        prepared.target,
        out.visibility[0],
        prepared.visibility,
        config.vis_weight,
        valid=prepared.valid,
        mask_occluded=config.mask_occluded_mse,
    )


def select_parameters(network: TrackingNetwork, config: TrainConfig) -> List[Dict[str, Any]]:
    """
    Optimizer parameter groups; everything left out is frozen.

    "adapters" trains the LoRA adapters, widened projections and timestep
    bias; "all" also trains the transformer base weights. The codec trains at
    `codec_lr_scale` times the learning rate unless frozen.
    """
    groups = network.parameter_groups()
    dit_params = groups["adapters"] + groups["projections"]
    frozen = list(groups["base"])
    if config.train_groups == "all":
        dit_params += groups["base"]
        frozen = []
    codec_params = [] if config.freeze_codec else groups["codec"]
    if config.freeze_codec:
        frozen += groups["codec"]

    for p in network.parameters():
        p.requires_grad_(True)
    for p in frozen:
        p.requires_grad_(False)

    param_groups = [{"params": dit_params, "lr": config.learning_rate}]
    if codec_params:
        param_groups.append({"params": codec_params, "lr": config.learning_rate * config.codec_lr_scale})
    logger.info(
        f"Training {sum(p.numel() for p in dit_params)} transformer and "
        f"{sum(p.numel() for p in codec_params)} codec parameters ({config.train_groups})"
    )
    return param_groups


def build_optimizer(network: TrackingNetwork, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        select_parameters(network, config),
        lr=config.learning_rate,
        betas=config.betas,
        weight_decay=config.weight_decay,
    )


def train_step(
    network: TrackingNetwork,
    optimizer: torch.optim.Optimizer,
    batch: Sequence[PreparedClip],
    config: TrainConfig,
    step: int = 0,
) -> StepRecord:
    """
    One optimizer update on the mean loss of a batch.

    Clips are forwarded one at a time and their losses summed in batch order.

    Raises:
        NonFiniteError: If activations or the loss stop being finite
    """
    started = time.time()
    clip_ids = [prepared.clip_id for prepared in batch]
    network.train()
    optimizer.zero_grad()

    total = mse = bce = 0.0
    try:
        for prepared in batch:
            breakdown = clip_loss(network, prepared, config)
            total = total + breakdown.total / len(batch)
            mse = mse + breakdown.mse.detach() / len(batch)
            bce = bce + breakdown.bce.detach() / len(batch)
    except NonFiniteError as e:
        logger.error(f"Step {step}: {e}")
        raise NonFiniteError(f"step {step}: {e}", clip_ids=clip_ids) from e

    if not torch.isfinite(total):
        logger.error(f"Step {step}: non-finite loss (mse={float(mse)}, bce={float(bce)}) on clips {clip_ids}")
        raise NonFiniteError(f"step {step}: non-finite loss", clip_ids=clip_ids)

    total.backward()
    optimizer.step()
    return StepRecord(
        step=step,
        loss=float(total.detach()),
        mse=float(mse),
        bce=float(bce),
        wall_time=time.time() - started,
        clip_ids=clip_ids,
    )


def _stride_view(clip: TrackClip, stride: int, num_frames: int) -> Optional[TrackClip]:
    """Frames 0, s, 2s, ... of a clip, at most `num_frames` of them."""
    indices = list(range(0, clip.num_frames, stride))[:num_frames]
    if len(indices) < 2:
        return None
    return clip if indices == list(range(clip.num_frames)) else clip.subsample(indices)


class ClipPool:
    """
    Fixed training clips, served at random temporal strides.

    A stride is drawn per sample from the strides the clip is long enough
    for, taken from the clip's own scene spec when it lists any; prepared
    tensors are cached per (clip, stride).
    """

    def __init__(self, clips: Sequence[TrackClip], num_frames: int, residual_head: bool = True, dtype=torch.float32):
        if not clips:
            raise InvalidInputError("training needs at least one clip")
        self.clips = list(clips)
        self.num_frames = num_frames
        self.residual_head = residual_head
        self.dtype = dtype
        self._cache: Dict[Tuple[int, int], PreparedClip] = {}

    def prepared(self, index: int, stride: int) -> PreparedClip:
        key = (index, stride)
        if key not in self._cache:
            view = _stride_view(self.clips[index], stride, self.num_frames)
            if view is None:
                raise InvalidInputError(f"clip {self.clips[index].clip_id} too short for stride {stride}")
            self._cache[key] = prepare_clip(view, self.residual_head, self.dtype)
        return self._cache[key]

    def sample(self, rng: np.random.Generator, batch_size: int, strides: Sequence[int]) -> List[PreparedClip]:
        batch = []
        for _ in range(batch_size):
            index = int(rng.integers(len(self.clips)))
            clip = self.clips[index]
            allowed = clip.spec.strides if clip.spec is not None and clip.spec.strides else strides
            usable = [s for s in allowed if clip.num_frames > s] or [1]
            stride = int(usable[int(rng.integers(len(usable)))])
            batch.append(self.prepared(index, stride))
        return batch


@dataclass
class TrainResult:
    history: List[StepRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [record.loss for record in self.history]


def train(
    network: TrackingNetwork,
    clips: Sequence[TrackClip],
    config: TrainConfig,
    log_path: Optional[Path] = None,
) -> TrainResult:
    """
    Train `network` in place for `config.steps` updates.

    Args:
        network: Network to train (its dtype decides the tensor dtype)
        clips: Training clips
        config: Training settings
        log_path: Optional line-delimited JSON log, one record per step

    Returns:
        Per-step loss history
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    dtype = next(network.parameters()).dtype
    pool = ClipPool(clips, network.config.num_frames, network.config.residual_head, dtype)
    optimizer = build_optimizer(network, config)
    result = TrainResult()

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")

    logger.info(f"Training for {config.steps} steps on {len(clips)} clips, strides {config.strides}")
    try:
        for step in range(config.steps):
            batch = pool.sample(rng, config.batch_size, config.strides)
            record = train_step(network, optimizer, batch, config, step)
            result.history.append(record)
            if log_file is not None:
                log_file.write(
                    json.dumps(
                        {
                            "step": record.step,
                            "loss": record.loss,
                            "mse": record.mse,
                            "bce": record.bce,
                            "wall_time": record.wall_time,
                        }
                    )
                    + "\n"
                )
            if config.log_every and step % config.log_every == 0:
                logger.info(f"step {step}: loss={record.loss:.6f} mse={record.mse:.6f} bce={record.bce:.6f}")
    finally:
        if log_file is not None:
            log_file.close()

    if result.history:
        logger.info(f"Finished training: loss {result.history[0].loss:.6f} -> {result.history[-1].loss:.6f}")
    return result
