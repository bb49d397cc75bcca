"""
Tracking network: codec and transformer composed into one module.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import torch
import torch.nn as nn

from ..errors import InvalidInputError
from .codec import LinearPatchCodec, make_geometry_latent
from .dit import AttentionTrace, ModelConfig, TrackDiT, build_dual_latents

logger = logging.getLogger(__name__)


@dataclass
class NetworkOutput:
    """Decoded outputs for every clip frame.

    `tracks` holds residuals in normalized space when the residual head is on
    and absolute normalized tracking pointmaps otherwise.
    """

    tracks: torch.Tensor
    visibility: torch.Tensor
    visibility_logits: torch.Tensor
    trace: Optional[AttentionTrace] = None


class TrackingNetwork(nn.Module):
    """Encode -> dual latents -> transformer -> decode."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.codec = LinearPatchCodec(config.patch_size, config.latent_channels)
        self.dit = TrackDiT(config)

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        groups = self.dit.parameter_groups()
        groups["codec"] = list(self.codec.parameters())
        return groups

    def forward(
        self,
        frames: torch.Tensor,
        pointmaps: torch.Tensor,
        trace_queries: Optional[Sequence[int]] = None,
        trace_layers: Optional[Sequence[int]] = None,
    ) -> NetworkOutput:
        """
        Args:
            frames: (B, T, H, W, 3) colors
            pointmaps: (B, T, H, W, 3) normalized reconstruction pointmaps
            trace_queries: Optional track-token indices whose attention to record
            trace_layers: Layers to record (default all)

        Returns:
            Decoded tracks and visibility, (B, T, H, W, 3) and (B, T, H, W)
        """
        if frames.shape != pointmaps.shape or frames.ndim != 5:
            raise InvalidInputError(
                f"frames {tuple(frames.shape)} and pointmaps {tuple(pointmaps.shape)} must both be (B, T, H, W, 3)"
            )
        c = self.config.latent_channels
        geometry = make_geometry_latent(self.codec.encode_rgb(frames), self.codec.encode_pointmap(pointmaps))
        track = build_dual_latents(geometry, self.config.first_frame_anchoring)
        out, trace = self.dit(geometry, track, trace_queries=trace_queries, trace_layers=trace_layers)
        logits = self.codec.decode_visibility_logits(out[..., c:])
        return NetworkOutput(
            tracks=self.codec.decode_track(out[..., :c]),
            visibility=torch.sigmoid(logits),
            visibility_logits=logits,
            trace=trace,
        )
