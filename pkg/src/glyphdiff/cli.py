"""Command-line entry points: dataset build/stats, train, sample, replay, eval, serve."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click
import numpy as np

from . import dataset as ds
from . import evaluation as ev
from .diffusion import Trainer, TrainingConfig, build_training_set, load_denoiser
from .schedule import build_linear_schedule
from .service import GenerationRequest, ModelSnapshot, generate_images, load_snapshot
from .text import build_encoder
from .unet import UNet, UNetConfig


@click.group()
def main():
    """Impression-conditioned glyph diffusion toolkit."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.group("dataset")
def dataset_group():
    """Corpus preparation commands."""


@dataset_group.command("build")
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, type=int, show_default=True)
def dataset_build(root, out, seed):
    """Load, filter, split, and cache a corpus; writes manifest.json and stats.txt."""
    manifest = ds.build_dataset(Path(root), Path(out), seed)
    n = len(manifest["fonts"])
    click.echo(f"built dataset with {n} fonts ({26 * n} glyphs) at {out}")
    click.echo((Path(out) / "stats.txt").read_text(), nl=False)


@dataset_group.command("stats")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
def dataset_stats(manifest_path):
    """Print corpus statistics from a manifest."""
    manifest = ds.load_manifest(manifest_path)

    def stats_for(split):
        entries = [e for e in manifest["fonts"] if e["split"] == split]
        if not entries:
            return None
        records = [ds.FontRecord(e["font_id"], {}, e["keywords"]) for e in entries]
        return ds.compute_stats(records)

    click.echo(ds.format_stats_table(stats_for("train"), stats_for("test")), nl=False)


def _load_train_config(path) -> tuple[TrainingConfig, UNetConfig, dict, dict]:
    cfg = json.loads(Path(path).read_text()) if path else {}
    training = TrainingConfig(**cfg.get("training", {}))
    unet = UNetConfig.from_dict({**UNetConfig().to_dict(), **cfg.get("unet", {})})
    encoder_spec = cfg.get("encoder", {"kind": "bert"})
    schedule_cfg = cfg.get("schedule", {})
    return training, unet, encoder_spec, schedule_cfg


@main.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--epochs", type=int, help="Override the configured epoch count.")
@click.option("--resume", "resume_path", type=click.Path(exists=True, dir_okay=False))
def train_cmd(manifest_path, config_path, out, epochs, resume_path):
    """Train the denoiser on a built dataset."""
    import torch

    training, unet_cfg, encoder_spec, schedule_cfg = _load_train_config(config_path)
    manifest = ds.load_manifest(manifest_path)
    encoder = build_encoder(encoder_spec, cache_dir=Path(out) / "embedding_cache")
    if encoder.dim != unet_cfg.text_dim:
        raise click.UsageError(f"encoder dim {encoder.dim} != unet text_dim {unet_cfg.text_dim}")
    data = build_training_set(manifest, Path(manifest_path).parent, encoder)

    if resume_path:
        trainer = Trainer.resume(resume_path, data, training, out)
    else:
        schedule = build_linear_schedule(training.T_train, schedule_cfg.get("beta_start", 1e-4),
                                         schedule_cfg.get("beta_end", 0.02))
        torch.manual_seed(training.seed)
        trainer = Trainer(UNet(unet_cfg), data, schedule, training, out)
    path = trainer.train(epochs=epochs)
    click.echo(f"trained to epoch {trainer.epoch}; checkpoint at {path}")


@main.command("sample")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--letters", default="QUICKFOX", show_default=True)
@click.option("--keywords", required=True, help='Comma-separated, e.g. "retro, ink, wed".')
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--method", default="ddim", type=click.Choice(["ddim", "ddpm"]), show_default=True)
@click.option("--steps", default=100, type=int, show_default=True)
@click.option("--n-variants", default=1, type=int, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def sample_cmd(ckpt_path, letters, keywords, seed, method, steps, n_variants, out):
    """Generate glyph PNGs from a trained checkpoint."""
    snap = load_snapshot(ckpt_path)
    req = GenerationRequest(
        letters=letters,
        keywords=[k.strip() for k in keywords.split(",") if k.strip()],
        seed=seed, method=method, steps=steps, n_variants=n_variants,
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for letter, v, png in generate_images(snap, req):
        (out / f"{letter}_v{v}.png").write_bytes(png)
    (out / "request.json").write_text(json.dumps(req.model_dump(), sort_keys=True, indent=1) + "\n")
    click.echo(f"wrote {len(letters) * n_variants} images to {out}")


@main.command("replay")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def replay_cmd(bundle_path, ckpt_path, out):
    """Re-run every request of an exported explorer bundle; identical seeds give identical PNGs."""
    snap = load_snapshot(ckpt_path)
    bundle = json.loads(Path(bundle_path).read_text())
    out = Path(out)
    for i, row in enumerate(bundle["rows"]):
        req = GenerationRequest(**row["request"])
        row_dir = out / f"row_{i:02d}"
        row_dir.mkdir(parents=True, exist_ok=True)
        for letter, v, png in generate_images(snap, req):
            (row_dir / f"{letter}_v{v}.png").write_bytes(png)
    click.echo(f"replayed {len(bundle['rows'])} rows to {out}")


@main.group("eval")
def eval_group():
    """FID / Intra-FID evaluation protocols."""


def _eval_setup(ckpt_path, manifest_path, extractor_name, toy_dim, steps):
    snap = load_snapshot(ckpt_path, manifest_path)
    manifest = ds.load_manifest(manifest_path)
    glyphs = ds.load_manifest_glyphs(manifest, Path(manifest_path).parent)
    if extractor_name == "toy":
        extractor = ev.ToyFeatureExtractor(dim=toy_dim, image_size=snap.model.config.image_size)
    else:
        extractor = ev.InceptionFeatureExtractor()

    def generate(letter, keywords, seed):
        req = GenerationRequest(letters=letter, keywords=list(keywords), seed=seed, steps=steps)
        [(_, _, png)] = generate_images(snap, req)
        import io

        from PIL import Image

        arr = np.asarray(Image.open(io.BytesIO(png)), dtype=np.float32)
        return arr / 127.5 - 1.0

    return manifest, glyphs, generate, extractor


@eval_group.command("fid")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n-fonts", default=5000, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--extractor", default="inception", type=click.Choice(["inception", "toy"]), show_default=True)
@click.option("--toy-dim", default=16, type=int, show_default=True)
@click.option("--steps", default=100, type=int, show_default=True, help="DDIM step count; must divide T.")
@click.option("--out", default="fid_report.json", show_default=True)
def eval_fid(ckpt_path, manifest_path, n_fonts, seed, extractor, toy_dim, steps, out):
    """Global FID over randomly selected fonts, all 26 letters each."""
    manifest, glyphs, generate, ext = _eval_setup(ckpt_path, manifest_path, extractor, toy_dim, steps)
    report = ev.protocol_global_fid(manifest, glyphs, generate, ext, n_fonts=n_fonts, seed=seed)
    ev.write_report(report, out)
    click.echo(f"FID: {report['fid']:.4f} (n={report['n']}) -> {out}")


@eval_group.command("intra-fid")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--min-fonts", default=200, type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--extractor", default="inception", type=click.Choice(["inception", "toy"]), show_default=True)
@click.option("--toy-dim", default=16, type=int, show_default=True)
@click.option("--steps", default=100, type=int, show_default=True, help="DDIM step count; must divide T.")
@click.option("--out", default="intra_fid_report.json", show_default=True)
@click.option("--csv", "csv_path", default="intra_fid_per_keyword.csv", show_default=True)
def eval_intra_fid(ckpt_path, manifest_path, min_fonts, seed, extractor, toy_dim, steps, out, csv_path):
    """Mean per-keyword FID over keywords tagged on more than --min-fonts fonts."""
    manifest, glyphs, generate, ext = _eval_setup(ckpt_path, manifest_path, extractor, toy_dim, steps)
    report = ev.protocol_intra_fid(manifest, glyphs, generate, ext,
                                   keyword_min_fonts=min_fonts, seed=seed)
    ev.write_report(report, out, csv_path)
    click.echo(f"Intra-FID: {report['fid']:.4f} over {report['n']} keywords -> {out}, {csv_path}")


@main.command("serve")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False),
              envvar="GLYPHDIFF_CKPT")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              envvar="GLYPHDIFF_MANIFEST")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True, envvar="GLYPHDIFF_PORT")
def serve_cmd(ckpt_path, manifest_path, host, port):
    """Run the HTTP inference service."""
    from .service import serve

    serve(ckpt_path, manifest_path, host=host, port=port)


if __name__ == "__main__":
    main()
