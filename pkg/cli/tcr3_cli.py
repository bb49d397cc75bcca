"""
Command-line interface for the tracker: synthesize clips, train, infer,
evaluate, inspect attention and run robustness sweeps.
"""

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import torch
from rich import box
from rich.console import Console
from rich.table import Table

# Ensure project root is on sys.path for local imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir)))

from tcr3.config import DEFAULT_SEED, LOG_LEVEL
from tcr3.core.synthscene import (
    SceneSpec,
    generate_clip,
    perturb_geometry,
    random_scene_spec,
    scene_library,
    sparsify_tracks,
)
from tcr3.errors import TrackerError
from tcr3.eval.attention import attention_report, write_attention_outputs
from tcr3.eval.metrics import QuerySpec, evaluate, projection_visibility
from tcr3.eval.sweep import (
    LENGTH_GRID,
    STRIDE_GRID,
    GeometryNoise,
    length_sweep,
    prediction_sweep,
    stride_sweep,
    write_sweep_csv,
)
from tcr3.inference.predictor import predict_long_video
from tcr3.model.dit import ModelConfig
from tcr3.model.pipeline import TrackingNetwork
from tcr3.storage.checkpoint import load_checkpoint, save_checkpoint
from tcr3.storage.clips import list_clips, load_clip, load_predictions, save_clip, save_predictions
from tcr3.training.trainer import TrainConfig, train as run_training

console = Console()
logger = logging.getLogger("tcr3-cli")


def _int_list(value):
    if value is None:
        return None
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")


def _fail(what, error):
    console.print(f"[bold red]Error {what}:[/bold red] {error}")
    sys.exit(1)


def _load_json(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _overrides(**values):
    """Flags left unset (None) do not override the config file."""
    return {k: v for k, v in values.items() if v is not None}


def _frame_indices(num_frames, stride, length):
    indices = list(range(0, num_frames, stride))
    if length is not None:
        indices = indices[:length]
    return indices


def _result_table(title, result):
    table = Table(title=title, box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("AJ", f"{result.average_jaccard:.4f}")
    table.add_row("APD3D", f"{result.apd3d:.4f}")
    table.add_row("OA", f"{result.occlusion_accuracy:.4f}")
    for delta, j, f in zip(result.thresholds, result.jaccard_per_threshold, result.apd_per_threshold):
        table.add_row(f"@{delta:.4g}", f"J={j:.4f}  within={f:.4f}")
    return table


@click.group()
@click.option("--log-level", default=LOG_LEVEL, help="Logging level (DEBUG, INFO, WARNING).")
def cli(log_level):
    """Reference-anchored dense 3D tracker."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


@cli.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), help="SceneSpec JSON file.")
@click.option("--count", default=1, show_default=True, help="Number of clips.")
@click.option("--seed", default=None, type=int, help="Base seed; clip i uses seed + i (default: the spec file seed, else TCR3_SEED).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--size", default=None, type=int, help="Image width and height for random scenes.")
@click.option("--frames", default=None, type=int, help="Frames per clip for random scenes.")
@click.option("--stride", default=1, show_default=True, help="Scene steps between frames.")
@click.option("--static-fraction", default=0.25, show_default=True, help="Share of camera-motion-only scenes.")
@click.option("--depth-noise", default=0.0, show_default=True, help="Relative depth noise on the input geometry.")
@click.option("--rot-noise", default=0.0, show_default=True, help="Pose rotation noise (radians).")
@click.option("--trans-noise", default=0.0, show_default=True, help="Pose translation noise.")
@click.option("--sparse", default=None, type=int, help="Keep ground truth at this many random pixels only.")
def synth(spec_path, count, seed, out_dir, size, frames, stride, static_fraction, depth_noise, rot_noise, trans_noise, sparse):
    """Write synthetic clips with analytic ground truth."""
    try:
        if spec_path:
            base = SceneSpec.from_dict(_load_json(spec_path))
            seed = base.seed if seed is None else seed
            specs = [replace(base, seed=seed + i) for i in range(count)]
        else:
            seed = DEFAULT_SEED if seed is None else seed
            shape = _overrides(width=size, height=size, num_frames=frames)
            specs = scene_library(count, seed, static_fraction=static_fraction, **shape)

        table = Table(title="Synthesized clips", box=box.ROUNDED)
        table.add_column("Clip", style="cyan")
        table.add_column("Frames", style="green")
        table.add_column("Visible", style="yellow")
        table.add_column("Manifest", style="magenta")
        for i, spec in enumerate(specs):
            clip = generate_clip(spec, stride=stride, clip_id=f"clip_{i:04d}")
            if depth_noise or rot_noise or trans_noise:
                clip = perturb_geometry(clip, depth_noise, (rot_noise, trans_noise), seed=seed + i)
            if sparse:
                clip = sparsify_tracks(clip, sparse, seed=seed + i)
            manifest = save_clip(clip, out_dir)
            table.add_row(clip.clip_id, str(clip.num_frames), f"{clip.gt_visibility.mean():.3f}", str(manifest))
        console.print(table)
    except (TrackerError, OSError, json.JSONDecodeError) as e:
        _fail("synthesizing clips", e)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON with 'model' and 'train' sections.")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Clip directory.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Checkpoint path.")
@click.option("--log", "log_path", default=None, type=click.Path(dir_okay=False), help="JSONL training log (default: <out>.jsonl).")
@click.option("--steps", default=None, type=int)
@click.option("--lr", default=None, type=float)
@click.option("--batch-size", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--strides", default=None, help="Comma-separated training strides.")
@click.option("--layers", default=None, type=int)
@click.option("--dim", default=None, type=int)
@click.option("--heads", default=None, type=int)
@click.option("--frames", default=None, type=int, help="Model clip length (anchor included).")
@click.option("--patch-size", default=None, type=int)
@click.option("--latent-channels", default=None, type=int)
@click.option("--lora-rank", default=None, type=int)
@click.option("--train-groups", default=None, type=click.Choice(["adapters", "all"]))
@click.option("--freeze-codec", is_flag=True, help="Keep the codec fixed.")
@click.option("--mask-occluded", is_flag=True, help="Drop occluded pairs from the MSE.")
@click.option("--no-anchor", is_flag=True, help="Track latents copy their own frame instead of frame 0.")
@click.option("--no-rope-align", is_flag=True, help="Track latents all use temporal index 0.")
@click.option("--no-residual", is_flag=True, help="Regress absolute tracks instead of residuals.")
def train(
    config_path, data_dir, out_path, log_path, steps, lr, batch_size, seed, strides, layers, dim, heads, frames,
    patch_size, latent_channels, lora_rank, train_groups, freeze_codec, mask_occluded, no_anchor, no_rope_align, no_residual,
):
    """Train a tracking network on a clip directory."""
    try:
        clips = [load_clip(path) for path in list_clips(data_dir)]
        if not clips:
            _fail("training", f"no clips in {data_dir}")
        stored = _load_json(config_path)

        model_fields = dict(stored.get("model", {}))
        model_fields.setdefault("image_height", clips[0].height)
        model_fields.setdefault("image_width", clips[0].width)
        model_fields.update(
            _overrides(
                layers=layers, dim=dim, heads=heads, num_frames=frames, patch_size=patch_size,
                latent_channels=latent_channels, lora_rank=lora_rank,
            )
        )
        if no_anchor:
            model_fields["first_frame_anchoring"] = False
        if no_rope_align:
            model_fields["temporal_rope_alignment"] = False
        if no_residual:
            model_fields["residual_head"] = False
        model_config = ModelConfig.from_dict(model_fields)

        train_fields = dict(stored.get("train", {}))
        train_fields.update(
            _overrides(
                steps=steps, learning_rate=lr, batch_size=batch_size, seed=seed, strides=_int_list(strides),
                train_groups=train_groups, freeze_codec=freeze_codec or None, mask_occluded_mse=mask_occluded or None,
            )
        )
        train_config = TrainConfig.from_dict(train_fields)

        torch.manual_seed(train_config.seed)
        network = TrackingNetwork(model_config)
        log_path = Path(log_path) if log_path else Path(out_path).with_suffix(".jsonl")
        result = run_training(network, clips, train_config, log_path=log_path)
        save_checkpoint(out_path, network, meta={"train": train_config.to_dict()})

        if result.history:
            console.print(
                f"[green]Trained {len(result.history)} steps: loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}[/green]"
            )
        console.print(f"[green]Checkpoint written to {out_path}[/green]")
    except (TrackerError, OSError, json.JSONDecodeError, TypeError) as e:
        _fail("training", e)


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clip", "clip_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Clip manifest.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Prediction file.")
@click.option("--stride", default=1, show_default=True, help="Use every stride-th frame.")
@click.option("--length", default=None, type=int, help="Use at most this many frames.")
@click.option("--single-pass", is_flag=True, help="Force one pass even when windows would be used.")
@click.option("--pad", is_flag=True, help="Pad short window passes to full length.")
@click.option("--decoded-anchor", is_flag=True, help="Report the decoded frame-0 residual instead of the identity.")
def infer(checkpoint, clip_path, out_path, stride, length, single_pass, pad, decoded_anchor):
    """Predict tracking pointmaps and visibility for a clip."""
    try:
        network, _ = load_checkpoint(checkpoint)
        clip = load_clip(clip_path)
        indices = _frame_indices(clip.num_frames, stride, length)
        if len(indices) < 2:
            _fail("running inference", f"stride {stride} / length {length} leaves fewer than 2 frames")
        clip = clip.subsample(indices)
        pred = predict_long_video(
            network,
            clip.frames,
            clip.recon_pointmaps,
            clip.depths,
            clip.cameras,
            pad=pad,
            force_single_pass=single_pass,
            anchor_identity=not decoded_anchor,
        )
        save_predictions(
            out_path,
            pred.tracks,
            pred.visibility,
            meta={"clip_id": clip.clip_id, "indices": indices, "plan": pred.plan.to_dict()},
        )
        console.print(
            f"[green]Predicted {len(indices)} frames in {pred.plan.num_passes} pass(es); written to {out_path}[/green]"
        )
    except (TrackerError, OSError) as e:
        _fail("running inference", e)


@cli.command(name="eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Ground-truth clip manifest.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="EvalResult JSON.")
@click.option("--sweep-csv", default=None, type=click.Path(dir_okay=False), help="Also re-score over stride/length grids.")
@click.option("--include-occluded", is_flag=True, help="Score locations of occluded pairs too.")
@click.option("--visibility", default="predicted", type=click.Choice(["predicted", "projection"]))
@click.option("--query", "query_mode", default="dense", type=click.Choice(["dense", "sparse"]))
@click.option("--num-points", default=256, show_default=True)
@click.option("--grid-step", default=1, show_default=True)
@click.option("--seed", default=DEFAULT_SEED, show_default=True)
def evaluate_cmd(pred_path, gt_path, out_path, sweep_csv, include_occluded, visibility, query_mode, num_points, grid_step, seed):
    """Score predictions against a ground-truth clip."""
    try:
        tracks, vis, meta = load_predictions(pred_path)
        clip = load_clip(gt_path)
        indices = meta.get("indices")
        if indices is not None and list(indices) != list(range(clip.num_frames)):
            clip = clip.subsample(indices)
        if visibility == "projection":
            vis = projection_visibility(tracks, clip)
        query = QuerySpec(mode=query_mode, num_points=num_points, grid_step=grid_step, seed=seed)
        result = evaluate(tracks, vis, clip, query, include_occluded)

        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
        console.print(_result_table(f"Evaluation of {clip.clip_id}", result))

        if sweep_csv:
            rows = prediction_sweep(tracks, vis, clip, STRIDE_GRID, LENGTH_GRID, query)
            write_sweep_csv(rows, sweep_csv)
            console.print(f"[green]{len(rows)} sweep rows written to {sweep_csv}[/green]")
    except (TrackerError, OSError) as e:
        _fail("evaluating", e)


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clip", "clip_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pixel", nargs=2, type=int, required=True, help="Query pixel U V in the reference frame.")
@click.option("--frame", default=1, show_default=True, help="Clip frame of the track token.")
@click.option("--layers", default=None, help="Comma-separated layers (default all).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def attn(checkpoint, clip_path, pixel, frame, layers, out_dir):
    """Emit attention heatmaps and a per-frame mass report for one track token."""
    try:
        network, _ = load_checkpoint(checkpoint)
        clip = load_clip(clip_path)
        if clip.num_frames > network.config.num_frames:
            clip = clip.subsample(range(network.config.num_frames))
        report, trace = attention_report(network, clip, tuple(pixel), frame, _int_list(layers))
        written = write_attention_outputs(report, trace, out_dir)

        table = Table(title=f"Attention mass of token {report.token}", box=box.ROUNDED)
        table.add_column("Frame", style="cyan")
        table.add_column("Mass", style="green")
        for j, mass in enumerate(report.frame_mass):
            style = "bold" if j == frame else ""
            table.add_row(f"[{style}]{j}[/{style}]" if style else str(j), f"{mass:.4f}")
        console.print(table)
        hits = sum(c.hit for c in report.correspondence)
        console.print(f"[green]Peak on the moved point's cell in {hits}/{len(report.correspondence)} layers[/green]")
        console.print(f"[green]{len(written)} files written to {out_dir}[/green]")
    except (TrackerError, OSError) as e:
        _fail("tracing attention", e)


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Sweep CSV.")
@click.option("--kind", default="both", type=click.Choice(["stride", "length", "both"]))
@click.option("--scenes", default=4, show_default=True, help="Random scenes per grid point.")
@click.option("--seed", default=DEFAULT_SEED, show_default=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), help="Use this SceneSpec instead of random scenes.")
@click.option("--strides", default=None, help="Comma-separated strides (default 1..12).")
@click.option("--lengths", default=None, help="Comma-separated lengths (default 12..120 step 12).")
@click.option("--geometry", default="gt", type=click.Choice(["gt", "noisy"]))
@click.option("--depth-noise", default=0.05, show_default=True)
@click.option("--rot-noise", default=0.01, show_default=True)
@click.option("--trans-noise", default=0.02, show_default=True)
def sweep(checkpoint, out_path, kind, scenes, seed, spec_path, strides, lengths, geometry, depth_noise, rot_noise, trans_noise):
    """Re-run inference over stride and length grids and write a CSV table."""
    try:
        network, _ = load_checkpoint(checkpoint)
        config = network.config
        if spec_path:
            specs = [SceneSpec.from_dict(_load_json(spec_path))]
        else:
            specs = [
                random_scene_spec(
                    seed + i,
                    width=config.image_width,
                    height=config.image_height,
                    max_speed=0.02,
                    camera_kinds=["static", "linear"],
                )
                for i in range(scenes)
            ]
        noise = GeometryNoise(depth=depth_noise, rotation=rot_noise, translation=trans_noise, seed=seed)
        rows = []
        if kind in ("stride", "both"):
            rows += stride_sweep(network, specs, _int_list(strides) or STRIDE_GRID, geometry, noise)
        if kind in ("length", "both"):
            rows += length_sweep(network, specs, _int_list(lengths) or LENGTH_GRID, geometry, noise)
        write_sweep_csv(rows, out_path)

        table = Table(title=f"Sweep ({geometry} geometry)", box=box.ROUNDED)
        for column in ("Sweep", "Value", "AJ", "APD3D", "OA"):
            table.add_column(column)
        for row in rows:
            table.add_row(
                row.sweep, str(row.value), f"{row.average_jaccard:.4f}", f"{row.apd3d:.4f}", f"{row.occlusion_accuracy:.4f}"
            )
        console.print(table)
    except (TrackerError, OSError, json.JSONDecodeError) as e:
        _fail("sweeping", e)


if __name__ == "__main__":
    cli()
