"""
Linear patch codec.
Encodes RGB frames and normalized pointmaps into per-frame latent grids and
decodes latent halves into residual tracks and visibility.
"""

import logging
from typing import Optional

import torch
import torch.nn as nn
from einops import rearrange

from ..config import DEFAULT_LATENT_CHANNELS, DEFAULT_PATCH_SIZE
from ..errors import InvalidInputError

logger = logging.getLogger(__name__)


class LinearPatchCodec(nn.Module):
    """
    Per-frame codec built from four linear maps over non-overlapping p x p patches.

    Frames are independent: the leading dimensions of every input are treated
    as batch dimensions, so there is no temporal mixing.
    """

    def __init__(self, patch_size: int = DEFAULT_PATCH_SIZE, channels: int = DEFAULT_LATENT_CHANNELS):
        """
        Initialize the codec.

        Args:
            patch_size: Patch edge p in pixels
            channels: Latent channels c
        """
        super().__init__()
        if patch_size < 1 or channels < 1:
            raise InvalidInputError(f"patch size and channels must be >= 1, got p={patch_size}, c={channels}")
        self.patch_size = patch_size
        self.channels = channels
        patch_dim = 3 * patch_size * patch_size
        self.rgb_encoder = nn.Linear(patch_dim, channels)
        self.pointmap_encoder = nn.Linear(patch_dim, channels)
        self.track_decoder = nn.Linear(channels, patch_dim)
        self.visibility_decoder = nn.Linear(channels, patch_dim)

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size

    def _patchify(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim < 3 or x.shape[-1] != 3:
            raise InvalidInputError(f"expected (..., H, W, 3) input, got {tuple(x.shape)}")
        H, W = x.shape[-3], x.shape[-2]
        p = self.patch_size
        if H % p or W % p:
            raise InvalidInputError(f"image size {H}x{W} not divisible by patch size {p}")
        return rearrange(x, "... (h p1) (w p2) c -> ... h w (p1 p2 c)", p1=p, p2=p)

    def _unpatchify(self, x: torch.Tensor) -> torch.Tensor:
        p = self.patch_size
        return rearrange(x, "... h w (p1 p2 c) -> ... (h p1) (w p2) c", p1=p, p2=p, c=3)

    def _check_latent(self, latent: torch.Tensor):
        if latent.shape[-1] != self.channels:
            raise InvalidInputError(f"latent has {latent.shape[-1]} channels, codec expects {self.channels}")

    def encode_rgb(self, frames: torch.Tensor) -> torch.Tensor:
        """(..., H, W, 3) colors -> (..., H/p, W/p, c)."""
        return self.rgb_encoder(self._patchify(frames))

    def encode_pointmap(self, pointmaps: torch.Tensor) -> torch.Tensor:
        """(..., H, W, 3) normalized pointmaps -> (..., H/p, W/p, c)."""
        return self.pointmap_encoder(self._patchify(pointmaps))

    def decode_track(self, latent: torch.Tensor) -> torch.Tensor:
        """(..., h, w, c) -> (..., H, W, 3) residual in normalized space."""
        self._check_latent(latent)
        return self._unpatchify(self.track_decoder(latent))

    def decode_visibility_logits(self, latent: torch.Tensor) -> torch.Tensor:
        """Channel-averaged pre-activation, (..., H, W)."""
        self._check_latent(latent)
        return self._unpatchify(self.visibility_decoder(latent)).mean(dim=-1)

    def decode_visibility(self, latent: torch.Tensor) -> torch.Tensor:
        """(..., h, w, c) -> (..., H, W) visibility probabilities."""
        return torch.sigmoid(self.decode_visibility_logits(latent))

    @torch.no_grad()
    def init_orthonormal(self, generator: Optional[torch.Generator] = None):
        """
        Orthonormal encoders with transposed decoders and zero biases.

        Requires c == 3p^2, after which decode(encode(x)) == x for both
        the rgb/track and pointmap/visibility pairs.
        """
        if self.channels != self.patch_dim:
            raise InvalidInputError(f"orthonormal init needs c == 3p^2 = {self.patch_dim}, got {self.channels}")
        for encoder, decoder in (
            (self.rgb_encoder, self.track_decoder),
            (self.pointmap_encoder, self.visibility_decoder),
        ):
            dtype = encoder.weight.dtype
            gaussian = torch.randn(self.patch_dim, self.patch_dim, generator=generator, dtype=torch.float64)
            q, _ = torch.linalg.qr(gaussian)
            encoder.weight.copy_(q.to(dtype))
            decoder.weight.copy_(q.T.to(dtype))
            encoder.bias.zero_()
            decoder.bias.zero_()


def make_geometry_latent(z_rgb: torch.Tensor, z_pm: torch.Tensor) -> torch.Tensor:
    """Channel-wise concatenation [z_rgb; z_pm] -> (..., h, w, 2c)."""
    if z_rgb.shape != z_pm.shape:
        raise InvalidInputError(f"rgb latent {tuple(z_rgb.shape)} and pointmap latent {tuple(z_pm.shape)} differ")
    return torch.cat([z_rgb, z_pm], dim=-1)
