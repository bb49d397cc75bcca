"""
Video transformer with full 3D attention over geometry and track latents.
Houses the dual-latent assembly, RoPE position assignment, channel-doubled
input/output projections and LoRA-adapted transformer blocks.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from ..config import (
    DEFAULT_HEADS,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_LATENT_CHANNELS,
    DEFAULT_LAYERS,
    DEFAULT_LORA_RANK,
    DEFAULT_MODEL_DIM,
    DEFAULT_NUM_FRAMES,
    DEFAULT_PATCH_SIZE,
    DEFAULT_ROPE_THETA,
)
from ..errors import InvalidInputError, NonFiniteError
from .lora import LoraLinear
from .rope import attention, check_partition, default_partition

logger = logging.getLogger(__name__)

GEOMETRY = 0
TRACK = 1


@dataclass
class ModelConfig:
    """Architecture of the codec + transformer pair, including ablation switches."""

    layers: int = DEFAULT_LAYERS
    dim: int = DEFAULT_MODEL_DIM
    heads: int = DEFAULT_HEADS
    rope_partition: Optional[Tuple[int, int, int]] = None
    rope_theta: float = DEFAULT_ROPE_THETA
    image_height: int = DEFAULT_IMAGE_SIZE
    image_width: int = DEFAULT_IMAGE_SIZE
    patch_size: int = DEFAULT_PATCH_SIZE
    latent_channels: int = DEFAULT_LATENT_CHANNELS
    num_frames: int = DEFAULT_NUM_FRAMES
    lora_rank: int = DEFAULT_LORA_RANK
    lora_alpha: Optional[float] = None
    mlp_ratio: int = 4
    first_frame_anchoring: bool = True
    temporal_rope_alignment: bool = True
    residual_head: bool = True
    timestep: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise InvalidInputError(f"model dim {self.dim} not divisible by {self.heads} heads")
        if self.rope_partition is None:
            self.rope_partition = default_partition(self.head_dim)
        self.rope_partition = tuple(int(p) for p in self.rope_partition)
        check_partition(self.rope_partition, self.head_dim)
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise InvalidInputError(
                f"image {self.image_height}x{self.image_width} not divisible by patch size {self.patch_size}"
            )
        if self.num_frames < 1 or self.layers < 0:
            raise InvalidInputError("num_frames must be >= 1 and layers >= 0")
        if self.timestep != 0:
            raise InvalidInputError("the regressor runs at the fixed diffusion timestep 0")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def latent_height(self) -> int:
        return self.image_height // self.patch_size

    @property
    def latent_width(self) -> int:
        return self.image_width // self.patch_size

    @property
    def token_channels(self) -> int:
        """Channels of a geometry or track latent (2c)."""
        return 2 * self.latent_channels

    @property
    def max_frame_count(self) -> int:
        """Capacity F (frames besides the reference frame)."""
        return self.num_frames - 1

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["rope_partition"] = list(self.rope_partition)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        return cls(**data)


@dataclass
class TokenSequence:
    """Flattened geometry-then-track tokens with their (x, y, t) positions."""

    tokens: torch.Tensor
    positions: torch.Tensor
    segments: torch.Tensor
    num_frames: int
    grid: Tuple[int, int]

    @property
    def length(self) -> int:
        return self.positions.shape[0]


@dataclass
class AttentionTrace:
    """
    Attention captured from selected track tokens.

    `weights[(layer, head)]` is (B, Q, N_geometry), renormalized over geometry
    tokens; `geometry_share[(layer, head)]` is the (B, Q) fraction of the raw
    attention that went to geometry tokens at all.
    """

    queries: List[int]
    num_frames: int
    grid: Tuple[int, int]
    weights: Dict[Tuple[int, int], torch.Tensor] = field(default_factory=dict)
    geometry_share: Dict[Tuple[int, int], torch.Tensor] = field(default_factory=dict)

    def frame_mass(self) -> torch.Tensor:
        """(B, Q, T) attention mass per geometry frame, averaged over captured layers and heads."""
        h, w = self.grid
        stacked = torch.stack(list(self.weights.values()))
        per_frame = rearrange(stacked, "k b q (t n) -> k b q t n", t=self.num_frames, n=h * w).sum(-1)
        return per_frame.mean(0)


def build_dual_latents(geometry: torch.Tensor, first_frame_anchoring: bool = True) -> torch.Tensor:
    """
    Track latents from geometry latents (..., T, h, w, 2c).

    With anchoring every r_j is a copy of g_0; without it r_j = g_j.
    """
    if first_frame_anchoring:
        return geometry[..., :1, :, :, :].expand_as(geometry).clone()
    return geometry.clone()


def assign_positions(geometry: torch.Tensor, track: torch.Tensor, temporal_rope_alignment: bool = True) -> TokenSequence:
    """
    Flatten (B, T, h, w, C) geometry and track latents into one sequence.

    Geometry token (x, y) of frame j sits at (x, y, j). Track tokens share the
    index of their target frame when aligned and t = 0 otherwise.
    """
    if geometry.shape != track.shape:
        raise InvalidInputError(f"geometry {tuple(geometry.shape)} and track {tuple(track.shape)} latents differ")
    _, T, h, w, _ = geometry.shape
    device = geometry.device

    t, y, x = torch.meshgrid(
        torch.arange(T, device=device), torch.arange(h, device=device), torch.arange(w, device=device), indexing="ij"
    )
    geo_pos = torch.stack([x, y, t], dim=-1).reshape(-1, 3)
    track_pos = geo_pos.clone()
    if not temporal_rope_alignment:
        track_pos[:, 2] = 0

    tokens = torch.cat(
        [rearrange(geometry, "b t h w c -> b (t h w) c"), rearrange(track, "b t h w c -> b (t h w) c")], dim=1
    )
    n = T * h * w
    segments = torch.cat([torch.full((n,), GEOMETRY, device=device), torch.full((n,), TRACK, device=device)])
    return TokenSequence(tokens, torch.cat([geo_pos, track_pos]).long(), segments.long(), T, (h, w))


@torch.no_grad()
def init_input_projection(base: nn.Linear) -> nn.Linear:
    """Tile a d_in -> d map to 2 d_in -> d: W' = [W | W], so W'[a; b] = W a + W b."""
    proj = nn.Linear(2 * base.in_features, base.out_features, dtype=base.weight.dtype)
    proj.weight.copy_(torch.cat([base.weight, base.weight], dim=1))
    proj.bias.copy_(base.bias)
    return proj


@torch.no_grad()
def init_output_projection(base: nn.Linear) -> nn.Linear:
    """Extend a d -> c map to d -> 2c: first c channels copy it, the last c start at zero."""
    proj = nn.Linear(base.in_features, 2 * base.out_features, dtype=base.weight.dtype)
    proj.weight.copy_(torch.cat([base.weight, torch.zeros_like(base.weight)], dim=0))
    proj.bias.copy_(torch.cat([base.bias, torch.zeros_like(base.bias)]))
    return proj


def timestep_embedding(t: float, dim: int) -> torch.Tensor:
    """Sinusoidal embedding [cos(t f_i); sin(t f_i)]."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)])
    if dim % 2:
        emb = torch.cat([emb, torch.zeros(1, dtype=torch.float64)])
    return emb


class TransformerBlock(nn.Module):
    """Pre-norm block: RoPE attention then GELU MLP, both residual."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d, r = config.dim, config.lora_rank
        self.heads = config.heads
        self.partition = config.rope_partition
        self.theta = config.rope_theta
        self.norm1 = nn.LayerNorm(d)
        self.q = LoraLinear(d, d, r, config.lora_alpha)
        self.k = LoraLinear(d, d, r, config.lora_alpha)
        self.v = LoraLinear(d, d, r, config.lora_alpha)
        self.out = LoraLinear(d, d, r, config.lora_alpha)
        self.norm2 = nn.LayerNorm(d)
        self.fc1 = LoraLinear(d, config.mlp_ratio * d, r, config.lora_alpha)
        self.fc2 = LoraLinear(config.mlp_ratio * d, d, r, config.lora_alpha)

    def forward(
        self, x: torch.Tensor, positions: torch.Tensor, return_weights: bool = False
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        h = self.norm1(x)
        split = lambda t: rearrange(t, "b n (heads d) -> b heads n d", heads=self.heads)
        out, weights = attention(
            split(self.q(h)), split(self.k(h)), split(self.v(h)), positions, self.partition, self.theta, return_weights
        )
        x = x + self.out(rearrange(out, "b heads n d -> b n (heads d)"))
        x = x + self.fc2(F.gelu(self.fc1(self.norm2(x))))
        return x, weights


class TrackDiT(nn.Module):
    """
    One-step regressor over [geometry latents, track latents].

    The input and output projections are built from base c-channel maps the
    way a pre-trained video model is widened to the doubled token channels.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c, d = config.latent_channels, config.dim
        self.input_proj = init_input_projection(nn.Linear(c, d))
        self.output_proj = init_output_projection(nn.Linear(d, c))
        # embedding of the fixed timestep, learned from there on
        self.timestep_bias = nn.Parameter(timestep_embedding(config.timestep, d).float())
        self.blocks = nn.ModuleList([TransformerBlock(config) for _ in range(config.layers)])
        self.final_norm = nn.LayerNorm(d)

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        """Parameters split into adapters, widened projections and the frozen-able base."""
        groups = {"adapters": [], "projections": [], "base": []}
        for name, param in self.named_parameters():
            if ".adapter." in name:
                groups["adapters"].append(param)
            elif name.startswith(("input_proj", "output_proj", "timestep_bias")):
                groups["projections"].append(param)
            else:
                groups["base"].append(param)
        return groups

    def forward_tokens(
        self,
        tokens: torch.Tensor,
        positions: torch.Tensor,
        capture_layers: Optional[Sequence[int]] = None,
    ) -> Tuple[torch.Tensor, Dict[int, torch.Tensor]]:
        """
        Run the transformer on an explicit token sequence.

        Args:
            tokens: (B, N, 2c) latent tokens
            positions: (N, 3) RoPE positions
            capture_layers: Layers whose (B, heads, N, N) attention weights to return

        Returns:
            ((B, N, 2c) outputs for every token, {layer: weights})
        """
        if tokens.shape[-1] != self.config.token_channels:
            raise InvalidInputError(f"tokens have {tokens.shape[-1]} channels, expected {self.config.token_channels}")
        capture = set(capture_layers or [])
        x = self.input_proj(tokens) + self.timestep_bias
        captured = {}
        for i, block in enumerate(self.blocks):
            x, weights = block(x, positions, return_weights=i in capture)
            if weights is not None:
                captured[i] = weights
            if not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite activations after block {i}")
        return self.output_proj(self.final_norm(x)), captured

    def forward(
        self,
        geometry: torch.Tensor,
        track: torch.Tensor,
        trace_queries: Optional[Sequence[int]] = None,
        trace_layers: Optional[Sequence[int]] = None,
        trace_heads: Optional[Sequence[int]] = None,
    ) -> Tuple[torch.Tensor, Optional[AttentionTrace]]:
        """
        Predict track outputs r_hat.

        Args:
            geometry: (B, T, h, w, 2c) geometry latents
            track: (B, T, h, w, 2c) track latents
            trace_queries: Track-token indices (frame-major over T, h, w) to trace
            trace_layers: Layers to trace (default all)
            trace_heads: Heads to trace (default all)

        Returns:
            ((B, T, h, w, 2c) track outputs; first c channels are the residual
            latent, last c the visibility latent), optional AttentionTrace
        """
        cfg = self.config
        _, T, h, w, _ = geometry.shape
        if (h, w) != (cfg.latent_height, cfg.latent_width):
            raise InvalidInputError(f"latent grid {h}x{w} does not match config {cfg.latent_height}x{cfg.latent_width}")
        if T > cfg.num_frames:
            raise InvalidInputError(f"{T} frames exceed the configured clip length {cfg.num_frames}")

        seq = assign_positions(geometry, track, cfg.temporal_rope_alignment)
        layers = list(range(cfg.layers)) if trace_layers is None else list(trace_layers)
        out, captured = self.forward_tokens(seq.tokens, seq.positions, layers if trace_queries is not None else None)

        n = T * h * w
        track_out = rearrange(out[:, n:], "b (t h w) c -> b t h w c", t=T, h=h, w=w)

        trace = None
        if trace_queries is not None:
            queries = list(trace_queries)
            rows = torch.as_tensor(queries, device=out.device) + n
            heads = list(range(cfg.heads)) if trace_heads is None else list(trace_heads)
            trace = AttentionTrace(queries=queries, num_frames=T, grid=(h, w))
            for layer in layers:
                for head in heads:
                    to_geometry = captured[layer][:, head, rows, :n]
                    share = to_geometry.sum(-1)
                    trace.weights[(layer, head)] = (to_geometry / share[..., None]).detach()
                    trace.geometry_share[(layer, head)] = share.detach()
        return track_out, trace
