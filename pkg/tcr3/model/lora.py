"""
Low-rank adapters for linear layers.
"""

import logging
import math
from typing import Iterator, Optional

import torch
import torch.nn as nn

from ..errors import InvalidInputError

logger = logging.getLogger(__name__)


class LoraAdapter(nn.Module):
    """Low-rank delta scale * A @ B for a d_in -> d_out map; B starts at zero."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: Optional[float] = None):
        super().__init__()
        if rank < 1:
            raise InvalidInputError(f"LoRA rank must be >= 1, got {rank}")
        self.rank = rank
        self.scale = (alpha if alpha is not None else rank) / rank
        self.A = nn.Parameter(torch.empty(d_in, rank))
        self.B = nn.Parameter(torch.zeros(rank, d_out))
        bound = 1.0 / math.sqrt(d_in)
        nn.init.uniform_(self.A, -bound, bound)

    def delta(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale * (x @ self.A) @ self.B


def apply_lora(base: nn.Linear, adapter: LoraAdapter, x: torch.Tensor) -> torch.Tensor:
    """y = base(x) + scale * (x A) B."""
    return base(x) + adapter.delta(x)


class LoraLinear(nn.Module):
    """nn.Linear with an optional adapter attached."""

    def __init__(self, d_in: int, d_out: int, rank: int = 0, alpha: Optional[float] = None):
        super().__init__()
        self.base = nn.Linear(d_in, d_out)
        self.adapter = LoraAdapter(d_in, d_out, rank, alpha) if rank > 0 else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.adapter is None:
            return self.base(x)
        return apply_lora(self.base, self.adapter, x)


def lora_modules(model: nn.Module) -> Iterator[LoraAdapter]:
    for module in model.modules():
        if isinstance(module, LoraAdapter):
            yield module
