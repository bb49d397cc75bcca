"""
Finite-difference verification of the training gradients.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..errors import InvalidInputError
from ..model.pipeline import TrackingNetwork
from .trainer import PreparedClip, TrainConfig, clip_loss

logger = logging.getLogger(__name__)

REL_FLOOR = 1e-6


@dataclass
class GradSample:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        return abs(self.analytic - self.numeric) / max(abs(self.analytic), abs(self.numeric), REL_FLOOR)


@dataclass
class GradCheckResult:
    samples: List[GradSample] = field(default_factory=list)

    @property
    def max_relative_error(self) -> float:
        return max((s.relative_error for s in self.samples), default=0.0)

    def blocks(self) -> List[str]:
        return sorted({s.name for s in self.samples})

    def samples_per_block(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for s in self.samples:
            counts[block_name(s.name)] = counts.get(block_name(s.name), 0) + 1
        return counts


def block_name(param_name: str) -> str:
    """Transformer block ("dit.blocks.3") or top-level layer ("codec.rgb_encoder") of a parameter."""
    parts = param_name.split(".")
    if "blocks" in parts:
        i = parts.index("blocks")
        return ".".join(parts[: i + 2])
    return ".".join(parts[:2])


def _sample_indices(
    named_params: Sequence[Tuple[str, nn.Parameter]],
    num_samples: int,
    rng: np.random.Generator,
    min_per_block: int = 0,
) -> List[Tuple[int, int]]:
    """
    One entry per parameter tensor, then `min_per_block` per block (capped at
    the block's size), then uniform draws over all scalars up to `num_samples`.
    """
    picks = [(b, int(rng.integers(p.numel()))) for b, (_, p) in enumerate(named_params)]

    def draw(members: List[int], count: int):
        sizes = np.array([named_params[b][1].numel() for b in members], dtype=np.float64)
        for _ in range(count):
            b = members[int(rng.choice(len(members), p=sizes / sizes.sum()))]
            picks.append((b, int(rng.integers(named_params[b][1].numel()))))

    blocks: Dict[str, List[int]] = {}
    for b, (name, _) in enumerate(named_params):
        blocks.setdefault(block_name(name), []).append(b)
    for members in blocks.values():
        have = sum(1 for b, _ in picks if b in members)
        total = sum(named_params[b][1].numel() for b in members)
        draw(members, max(0, min(min_per_block, total) - have))

    draw(list(range(len(named_params))), max(0, num_samples - len(picks)))
    return picks


def check_gradients(
    loss_fn: Callable[[], torch.Tensor],
    named_params: Sequence[Tuple[str, nn.Parameter]],
    eps: float = 1e-4,
    num_samples: int = 64,
    seed: int = 0,
    min_per_block: int = 0,
) -> GradCheckResult:
    """
    Compare autograd gradients of `loss_fn` with central differences.

    Args:
        loss_fn: Closure recomputing the scalar loss from the current parameters
        named_params: Parameters to check (float64)
        eps: Finite-difference step
        num_samples: Scalars to sample in total (at least one per parameter)
        seed: Sampling seed
        min_per_block: Scalars to sample in every block at least

    Returns:
        Per-sample analytic and numeric gradients
    """
    named_params = [(n, p) for n, p in named_params]
    if not named_params:
        raise InvalidInputError("no parameters to check")
    for name, p in named_params:
        if p.dtype != torch.float64:
            raise InvalidInputError(f"gradient checks run in float64, {name} is {p.dtype}")

    for _, p in named_params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for _, p in named_params]

    result = GradCheckResult()
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for b, index in _sample_indices(named_params, num_samples, rng, min_per_block):
            name, p = named_params[b]
            flat = p.view(-1)
            original = flat[index].item()
            flat[index] = original + eps
            plus = loss_fn().item()
            flat[index] = original - eps
            minus = loss_fn().item()
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            result.samples.append(GradSample(name, index, float(analytic[b].view(-1)[index]), numeric))
    return result


def grad_check(
    network: TrackingNetwork,
    prepared: PreparedClip,
    config: Optional[TrainConfig] = None,
    eps: float = 1e-4,
    num_samples: int = 64,
    seed: int = 0,
    min_per_block: int = 0,
) -> GradCheckResult:
    """
    Gradient check of the full training loss on one clip.

    Works on a float64 copy of the network; every parameter block of the
    network gets sampled, frozen ones included.
    """
    config = config or TrainConfig()
    model = copy.deepcopy(network).to(torch.float64)
    for p in model.parameters():
        p.requires_grad_(True)
    prepared64 = PreparedClip(
        clip_id=prepared.clip_id,
        frames=prepared.frames.to(torch.float64),
        pointmaps=prepared.pointmaps.to(torch.float64),
        target=prepared.target.to(torch.float64),
        visibility=prepared.visibility.to(torch.float64),
        valid=prepared.valid,
        stats=prepared.stats,
    )
    result = check_gradients(
        lambda: clip_loss(model, prepared64, config).total,
        list(model.named_parameters()),
        eps=eps,
        num_samples=num_samples,
        seed=seed,
        min_per_block=min_per_block,
    )
    logger.info(
        f"Gradient check on {prepared.clip_id}: {len(result.samples)} samples over "
        f"{len(result.blocks())} blocks, max relative error {result.max_relative_error:.3e}"
    )
    return result
