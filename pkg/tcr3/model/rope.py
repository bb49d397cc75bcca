"""
3D rotary positional embedding and full attention over (x, y, t) token positions.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import torch

from ..errors import InvalidInputError

logger = logging.getLogger(__name__)

# Position columns are (x, y, t); channel groups are laid out (t, x, y).
AXIS_ORDER = (2, 0, 1)


def default_partition(head_dim: int) -> Tuple[int, int, int]:
    """(dim_t, dim_x, dim_y) = (d_k/2, d_k/4, d_k/4), each rounded to an even count."""
    dim_x = 2 * (head_dim // 8)
    dim_y = dim_x
    dim_t = head_dim - dim_x - dim_y
    return dim_t, dim_x, dim_y


def check_partition(partition: Sequence[int], head_dim: int):
    if len(partition) != 3 or any(p < 0 or p % 2 for p in partition) or sum(partition) != head_dim:
        raise InvalidInputError(f"RoPE partition {tuple(partition)} must be three even numbers summing to {head_dim}")


def rope_angles(positions: torch.Tensor, partition: Sequence[int], theta: float, dtype: torch.dtype) -> torch.Tensor:
    """Rotation angle of every channel pair, shape (N, d_k / 2)."""
    positions = positions.to(dtype)
    angles = []
    for axis, dim in zip(AXIS_ORDER, partition):
        if dim == 0:
            continue
        m = torch.arange(dim // 2, dtype=dtype, device=positions.device)
        freqs = theta ** (-2.0 * m / dim)
        angles.append(positions[:, axis, None] * freqs[None, :])
    return torch.cat(angles, dim=-1)


def rope_rotate(x: torch.Tensor, positions: torch.Tensor, partition: Sequence[int], theta: float = 10000.0) -> torch.Tensor:
    """
    Rotate consecutive channel pairs of `x` by position-dependent angles.

    Args:
        x: (..., N, d_k) vectors
        positions: (N, 3) integer (x, y, t) positions
        partition: (dim_t, dim_x, dim_y) channel split of d_k
        theta: Base frequency

    Returns:
        Rotated tensor with the shape of `x`
    """
    check_partition(partition, x.shape[-1])
    if positions.ndim != 2 or positions.shape[-1] != 3 or positions.shape[0] != x.shape[-2]:
        raise InvalidInputError(f"positions {tuple(positions.shape)} do not match {x.shape[-2]} tokens")
    angles = rope_angles(positions, partition, theta, x.dtype)
    cos, sin = torch.cos(angles), torch.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    rotated = torch.stack([even * cos - odd * sin, even * sin + odd * cos], dim=-1)
    return rotated.flatten(-2)


def attention(
    queries: torch.Tensor,
    keys: torch.Tensor,
    values: torch.Tensor,
    positions: torch.Tensor,
    partition: Sequence[int],
    theta: float = 10000.0,
    return_weights: bool = False,
) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Full scaled-dot-product attention with 3D RoPE on queries and keys.

    No masking: every token attends to every token of the sequence.

    Args:
        queries, keys, values: (..., N, d_k) tensors
        positions: (N, 3) token positions
        partition: RoPE channel split
        theta: RoPE base frequency
        return_weights: Also return the (..., N, N) softmax weights

    Returns:
        (outputs, weights or None)
    """
    if queries.shape != keys.shape or queries.shape[:-1] != values.shape[:-1]:
        raise InvalidInputError(
            f"attention shape mismatch: q {tuple(queries.shape)}, k {tuple(keys.shape)}, v {tuple(values.shape)}"
        )
    q = rope_rotate(queries, positions, partition, theta)
    k = rope_rotate(keys, positions, partition, theta)
    scores = q @ k.transpose(-2, -1) / math.sqrt(queries.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    out = weights @ values
    return out, (weights if return_weights else None)
