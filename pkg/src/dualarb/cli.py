"""Command-line entry points: dataset generation, degradation, training,
evaluation, single-slice inference, and the HTTP service."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import evaluate, kspace, phantom, trainer
from .model import ModelConfig


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise click.BadParameter(f"expected HxW, got {text!r}")
    return h, w


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


@click.group()
def main():
    """Dual-arbitrary-scale multi-contrast super-resolution toolkit."""


@main.command("phantom-gen")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--subjects", type=int, default=20, show_default=True)
@click.option("--size", default="96x96", show_default=True, help="canvas HxW (multiples of 24)")
@click.option("--slices", "slices_per_subject", type=int, default=1, show_default=True)
@click.option("--ellipses", type=int, default=6, show_default=True)
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def phantom_gen(seed, subjects, size, slices_per_subject, ellipses, ratios, out_dir):
    """Generate an aligned two-contrast phantom dataset with splits."""
    manifests = phantom.generate_dataset(
        out_dir, seed=seed, n_subjects=subjects, canvas=_parse_dims(size),
        n_ellipses=ellipses, slices_per_subject=slices_per_subject,
        ratios=_parse_floats(ratios),
    )
    for split, m in manifests.items():
        click.echo(f"{split}: {len(m)} slice pairs")


@main.command("degrade")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help=".mrs slice (or dataset dir with slices/)")
@click.option("--scale", type=float, required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mask-png", type=click.Path(), default=None,
              help="also export the matching low-pass mask as PNG")
def degrade_cmd(in_path, scale, out_path, mask_png):
    """Produce low-resolution .mrs slices via the k-space crop."""
    in_path, out_path = Path(in_path), Path(out_path)
    if in_path.is_dir():
        slice_dir = in_path / "slices" if (in_path / "slices").is_dir() else in_path
        sidecars = sorted(slice_dir.glob("*.json"))
        if not sidecars:
            raise click.ClickException(f"no .mrs slices under {slice_dir}")
        out_path.mkdir(parents=True, exist_ok=True)
        example = None
        for sc in sidecars:
            img = phantom.read_slice(sc.with_suffix(""))
            lr = kspace.degrade(img, scale)
            phantom.write_slice(lr, out_path / sc.stem)
            example = img.dims
        click.echo(f"degraded {len(sidecars)} slices at x{scale:g} into {out_path}")
        hr_dims = example
    else:
        img = phantom.read_slice(in_path)
        lr = kspace.degrade(img, scale)
        phantom.write_slice(lr, out_path)
        click.echo(f"{img.dims} -> {lr.dims} at x{scale:g}")
        hr_dims = img.dims
    if mask_png:
        mask = kspace.lowpass_mask(hr_dims, kspace.lr_dims_for_scale(hr_dims, scale))
        Path(mask_png).write_bytes(evaluate.render_gray_png(mask.values))
        click.echo(f"mask written to {mask_png}")


def _load_train_config(path):
    model_cfg, schedule, extras = ModelConfig(), trainer.CurriculumSchedule(), {}
    if path:
        raw = json.loads(Path(path).read_text())
        model_cfg = ModelConfig.from_dict({**ModelConfig().to_dict(),
                                           **raw.get("model", {})})
        schedule = trainer.CurriculumSchedule.from_dict(
            {**trainer.CurriculumSchedule().to_dict(), **raw.get("schedule", {})})
        extras = {k: v for k, v in raw.items() if k not in ("model", "schedule")}
    return model_cfg, schedule, extras


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with optional 'model', 'schedule', and loop keys")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--no-k-loss", is_flag=True, default=False)
@click.option("--strategy", type=click.Choice(trainer.STRATEGIES), default="cur-random",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps-per-epoch", type=int, default=None)
@click.option("--resume", type=click.Path(exists=True), default=None)
@click.option("--continuous-ref", is_flag=True, default=False,
              help="full-training ref scale drawn from the grid, not {LR,HR}")
@click.option("--quiet", is_flag=True, default=False)
def train_cmd(config_path, data_dir, out_dir, no_k_loss, strategy, seed,
              steps_per_epoch, resume, continuous_ref, quiet):
    """Run curriculum training; writes checkpoints and a JSONL log."""
    model_cfg, schedule, extras = _load_train_config(config_path)
    result = trainer.train(
        data_dir, out_dir, config=model_cfg, schedule=schedule,
        strategy=strategy, seed=extras.get("seed", seed),
        lambda_k=extras.get("lambda_k", trainer.LAMBDA_K),
        use_k=not no_k_loss,
        batch_size=extras.get("batch_size", 6),
        lr_patch=extras.get("lr_patch", 32),
        steps_per_epoch=extras.get("steps_per_epoch", steps_per_epoch),
        valid_scales=tuple(extras.get("valid_scales", (2.0, 4.0))),
        resume=resume, quiet=quiet, continuous_ref=continuous_ref,
    )
    click.echo(f"done: best valid PSNR {result.best_valid_psnr:.3f} dB; "
               f"checkpoints in {result.out_dir}")


@main.command("eval")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--scales", default="1.5,2,3,4,6,8", show_default=True)
@click.option("--ref", "ref_mode", type=click.Choice(["hr", "lr"]), default="hr",
              show_default=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", "out_path", required=True,
              help="report path; .json and/or .md, comma separated")
@click.option("--identity", "include_identity", is_flag=True, default=False,
              help="include the ground-truth-as-method sanity row")
def eval_cmd(ckpt_path, data_dir, scales, ref_mode, split, out_path, include_identity):
    """Per-scale PSNR/SSIM table vs nearest and bicubic baselines."""
    state = trainer.load_checkpoint(ckpt_path)
    manifest = phantom.load_dataset(data_dir)[split]
    report = evaluate.eval_model(
        state.model, manifest, _parse_floats(scales), ref_mode.upper(),
        include_identity=include_identity,
        meta={"checkpoint": str(ckpt_path), "split": split},
    )
    for target in str(out_path).split(","):
        target = Path(target.strip())
        if target.suffix == ".md":
            target.write_text(report.to_markdown())
        else:
            report.save_json(target)
        click.echo(f"wrote {target}")
    click.echo(report.to_markdown())


@main.command("infer")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_path", required=True, type=click.Path(),
              help="target LR slice (.mrs)")
@click.option("--ref", "ref_path", required=True, type=click.Path(),
              help="reference slice (.mrs), any resolution")
@click.option("--scale", type=float, required=True)
@click.option("--out", "out_path", required=True,
              help="output path(s): .mrs and/or .png, comma separated")
def infer_cmd(ckpt_path, in_path, ref_path, scale, out_path):
    """Reconstruct one slice at an arbitrary scale."""
    state = trainer.load_checkpoint(ckpt_path)
    tar = phantom.read_slice(in_path)
    ref = phantom.read_slice(ref_path)
    sr = evaluate.super_resolve(state.model, tar.pixels, ref.pixels, scale=scale)
    out_img = phantom.SliceImage(
        pixels=np.clip(sr, 0.0, None).astype(np.float32), contrast=tar.contrast,
        subject_id=tar.subject_id, slice_id=tar.slice_id, norm_max=tar.norm_max)
    for target in str(out_path).split(","):
        target = Path(target.strip())
        if target.suffix == ".png":
            target.write_bytes(evaluate.render_gray_png(sr))
        else:
            phantom.write_slice(out_img, target)
        click.echo(f"wrote {target}")
    click.echo(f"{tar.dims} -> {sr.shape} at x{scale:g}")


@main.command("ablate")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--variants", default=None,
              help=f"comma list from {','.join(evaluate.ABLATION_VARIANTS)}")
@click.option("--scales", default="2", show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True,
              help="single-stage epochs per variant")
@click.option("--steps-per-epoch", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def ablate_cmd(data_dir, out_dir, variants, scales, epochs, steps_per_epoch, seed):
    """Train each ablation variant briefly and emit schema-identical reports."""
    schedule = trainer.CurriculumSchedule(warmup_epochs=epochs, prelearn_epochs=0,
                                          fulltrain_epochs=0)
    names = [v.strip() for v in variants.split(",")] if variants else None
    reports = evaluate.ablation_suite(
        data_dir, out_dir, schedule=schedule, variants=names,
        scales=_parse_floats(scales), seed=seed, steps_per_epoch=steps_per_epoch)
    for key in sorted(reports):
        avg = reports[key].averages["model"]
        click.echo(f"{key}: PSNR {avg['psnr']:.3f} SSIM {avg['ssim']:.4f}")
    click.echo(f"combined report: {Path(out_dir) / 'ablation.json'}")


@main.command("serve")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None)
@click.option("--split", default="test", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--max-scale", type=float, default=8.0, show_default=True)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None,
              help="static frontend directory to mount at /")
def serve_cmd(ckpt_path, data_dir, split, host, port, max_scale, ui_dir):
    """Start the reconstruction HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_path=ckpt_path, data_dir=data_dir, split=split,
                     max_scale=max_scale, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
