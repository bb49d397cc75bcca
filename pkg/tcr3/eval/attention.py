"""
Attention analysis of track tokens: where each query looks across geometry
frames, whether it lands on the right latent cell, and heatmap figures.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from einops import rearrange
from PIL import Image

from ..core.geometry import project_to_image
from ..core.synthscene import TrackClip
from ..errors import InvalidInputError
from ..inference.predictor import predict_clip
from ..model.dit import AttentionTrace
from ..model.pipeline import TrackingNetwork

logger = logging.getLogger(__name__)

HEATMAP_SCALE = 4


@dataclass
class LayerCorrespondence:
    layer: int
    peak_cell: Tuple[int, int]
    target_cell: Optional[Tuple[int, int]]
    hit: bool
    aligned_mass: float


@dataclass
class AttentionReport:
    pixel: Tuple[int, int]
    frame: int
    token: int
    frame_mass: List[float]
    per_layer_mass: Dict[int, List[float]]
    argmax_frame: int
    correspondence: List[LayerCorrespondence] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["per_layer_mass"] = {str(k): v for k, v in self.per_layer_mass.items()}
        return data


def track_token(config, frame: int, pixel: Tuple[int, int]) -> int:
    """Index of the track token covering pixel (u, v) at clip frame `frame`."""
    u, v = pixel
    if not (0 <= u < config.image_width and 0 <= v < config.image_height):
        raise InvalidInputError(f"pixel {pixel} outside {config.image_width}x{config.image_height}")
    p = config.patch_size
    return (frame * config.latent_height + v // p) * config.latent_width + u // p


def layer_weights(trace: AttentionTrace, layer: int) -> np.ndarray:
    """Head-averaged (Q, T, h, w) attention of one layer, batch element 0."""
    heads = [w for (l, _), w in trace.weights.items() if l == layer]
    if not heads:
        raise InvalidInputError(f"layer {layer} was not traced")
    mean = np.mean([w[0].double().numpy() for w in heads], axis=0)
    h, w = trace.grid
    return rearrange(mean, "q (t h w) -> q t h w", t=trace.num_frames, h=h, w=w)


def traced_layers(trace: AttentionTrace) -> List[int]:
    return sorted({layer for layer, _ in trace.weights})


def _target_cell(clip: TrackClip, frame: int, pixel: Tuple[int, int], patch_size: int) -> Optional[Tuple[int, int]]:
    """Latent cell of frame `frame` containing the moved reference point, if visible."""
    u, v = pixel
    if clip.gt_visibility[frame, v, u] < 0.5:
        return None
    pu, pv, _, in_front = project_to_image(clip.gt_track_pointmaps[frame, v, u], clip.cameras[frame])
    if not in_front:
        return None
    iu, iv = int(np.rint(pu)), int(np.rint(pv))
    if not (0 <= iu < clip.width and 0 <= iv < clip.height):
        return None
    return iv // patch_size, iu // patch_size


def attention_report(
    network: TrackingNetwork,
    clip: TrackClip,
    pixel: Tuple[int, int],
    frame: int,
    layers: Optional[Sequence[int]] = None,
) -> Tuple[AttentionReport, AttentionTrace]:
    """
    Trace the track token at `pixel` of clip frame `frame`.

    Returns:
        The report (per-frame mass averaged over layers and heads, per-layer
        masses and the per-layer correspondence check) and the raw trace
    """
    if not 0 <= frame < clip.num_frames:
        raise InvalidInputError(f"frame {frame} outside clip of {clip.num_frames} frames")
    config = network.config
    token = track_token(config, frame, pixel)
    pred = predict_clip(
        network, clip.frames, clip.recon_pointmaps, clip.depths, clip.cameras, trace_queries=[token], trace_layers=layers
    )
    trace = pred.trace
    frame_mass = trace.frame_mass()[0, 0].double().numpy()

    per_layer = {}
    correspondence = []
    target = _target_cell(clip, frame, pixel, config.patch_size)
    for layer in traced_layers(trace):
        weights = layer_weights(trace, layer)[0]
        per_layer[layer] = weights.sum(axis=(1, 2)).tolist()
        aligned = weights[frame]
        peak = np.unravel_index(int(np.argmax(aligned)), aligned.shape)
        peak = (int(peak[0]), int(peak[1]))
        correspondence.append(
            LayerCorrespondence(
                layer=layer,
                peak_cell=peak,
                target_cell=target,
                hit=target is not None and peak == target,
                aligned_mass=float(aligned.sum()),
            )
        )

    report = AttentionReport(
        pixel=(int(pixel[0]), int(pixel[1])),
        frame=frame,
        token=token,
        frame_mass=frame_mass.tolist(),
        per_layer_mass=per_layer,
        argmax_frame=int(np.argmax(frame_mass)),
        correspondence=correspondence,
    )
    logger.info(
        f"Token {token} (pixel {pixel}, frame {frame}): top frame {report.argmax_frame} "
        f"with {frame_mass.max():.3f} of the attention"
    )
    return report, trace


def aligned_argmax_rate(
    network: TrackingNetwork,
    clip: TrackClip,
    num_tokens: int = 64,
    seed: int = 0,
) -> float:
    """Fraction of random track tokens (frames >= 1) whose layer-averaged attention peaks at their own frame."""
    config = network.config
    if clip.num_frames < 2:
        raise InvalidInputError("need at least two frames")
    n = config.latent_height * config.latent_width
    rng = np.random.default_rng(seed)
    candidates = np.arange(n, clip.num_frames * n)
    tokens = np.sort(rng.choice(candidates, size=min(num_tokens, candidates.size), replace=False))
    pred = predict_clip(network, clip.frames, clip.recon_pointmaps, clip.depths, trace_queries=tokens.tolist())
    mass = pred.trace.frame_mass()[0].double().numpy()
    own = tokens // n
    return float(np.mean(np.argmax(mass, axis=-1) == own))


def heatmap_image(weights: np.ndarray, scale: int = HEATMAP_SCALE) -> Image.Image:
    """
    (T, h, w) weights -> grayscale strip of T tiles left to right.

    Tile t covers columns [t * w * scale, (t + 1) * w * scale); latent cell
    (y, x) fills a scale x scale block. Intensity is weight / max weight * 255.
    """
    strip = rearrange(weights, "t h w -> h (t w)")
    peak = strip.max()
    pixels = np.zeros_like(strip) if peak <= 0 else strip / peak
    pixels = np.kron(pixels, np.ones((scale, scale)))
    return Image.fromarray(np.round(pixels * 255.0).astype(np.uint8))


def write_attention_outputs(
    report: AttentionReport,
    trace: AttentionTrace,
    out_dir: Union[str, Path],
    scale: int = HEATMAP_SCALE,
) -> List[Path]:
    """Write `report.json` and one `layer_<k>.png` heatmap per traced layer."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for layer in traced_layers(trace):
        path = out_dir / f"layer_{layer:02d}.png"
        heatmap_image(layer_weights(trace, layer)[0], scale).save(path)
        written.append(path)
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    written.append(report_path)
    return written
