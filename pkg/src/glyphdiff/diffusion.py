"""Training objective, training loop, and the two reverse-process samplers.

All randomness flows from a single run seed through named substreams
(weight init, per-epoch batch order and noise draws, per-variant sampling
noise), so every run, resume, and sample is reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from .schedule import NoiseSchedule, posterior_constants
from .text import ConditioningPair, TextEncoder
from .unet import BatchConditioning, UNet, UNetConfig

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    batch_size: int = 256
    learning_rate: float = 2e-4
    lr_decay_factor: float = 0.9
    lr_decay_every: int = 10
    epochs: int = 400
    T_train: int = 1000
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "lr_decay_factor", "lr_decay_every", "epochs", "T_train"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SamplerConfig:
    method: str = "ddim"
    steps: int = 100
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("ddim", "ddpm"):
            raise ValueError(f"method must be 'ddim' or 'ddpm', got {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def substream_seed(seed: int, name: str) -> int:
    """Independent 63-bit seed for a named substream of a run seed."""
    digest = hashlib.blake2b(f"{seed}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def _gather_coeffs(schedule: NoiseSchedule, t: torch.Tensor, device, dtype):
    abar = torch.as_tensor(schedule.alpha_bar, device=device, dtype=dtype)[t - 1]
    return abar.sqrt()[:, None, None, None], (1.0 - abar).sqrt()[:, None, None, None]


def q_sample_batch(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Batched closed-form forward jump with per-item step indices (1-based)."""
    c0, ce = _gather_coeffs(schedule, t, x0.device, x0.dtype)
    return c0 * x0 + ce * eps


def loss_given(model: UNet, x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
               cond: BatchConditioning, schedule: NoiseSchedule) -> torch.Tensor:
    """MSE between the drawn noise and the model's prediction at fixed (t, eps)."""
    x_t = q_sample_batch(x0, t, eps, schedule)
    pred = model(x_t, t, cond)
    return ((eps - pred) ** 2).mean()


def training_loss(model: UNet, x0: torch.Tensor, cond: BatchConditioning,
                  schedule: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """Draw per-image t and noise, form x_t, return the noise-prediction MSE."""
    B = x0.shape[0]
    t = torch.randint(1, schedule.T + 1, (B,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    loss = loss_given(model, x0, t.to(x0.device), eps.to(x0.device), cond, schedule)
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite training loss (t draws: {t.tolist()[:16]} ...)")
    return loss


@dataclass
class TrainingSet:
    """Flattened (glyph, conditioning) pairs ready for batching."""

    x0: torch.Tensor              # (N, 1, 32, 32)
    cond: BatchConditioning       # batched over the same N
    ids: list[tuple[str, str]]    # (font_id, letter) per item
    encoder_hash: str
    encoder_spec: dict = field(default_factory=dict)


def build_training_set(manifest: dict, base_dir, encoder: TextEncoder,
                       split: str = "train") -> TrainingSet:
    """Assemble all (glyph, letter, keyword sentence) triples of a split."""
    from .dataset import keywords_to_sentence, load_manifest_glyphs

    glyphs = load_manifest_glyphs(manifest, base_dir)
    xs, pairs, ids = [], [], []
    letter_seqs = {}
    for entry in manifest["fonts"]:
        if entry["split"] != split:
            continue
        sentence = keywords_to_sentence(entry["keywords"])
        imp = encoder.embed_impressions(sentence)
        for letter in sorted(entry["glyphs"]):
            if letter not in letter_seqs:
                letter_seqs[letter] = encoder.embed_letter(letter)
            xs.append(glyphs[entry["font_id"]][letter][None, :, :])
            pairs.append(ConditioningPair(letter=letter_seqs[letter], impressions=imp,
                                          encoder_hash=encoder.checkpoint_hash))
            ids.append((entry["font_id"], letter))
    if not xs:
        raise ValueError(f"manifest has no fonts in split {split!r}")
    return TrainingSet(
        x0=torch.from_numpy(np.stack(xs).astype(np.float32)),
        cond=BatchConditioning.from_pairs(pairs),
        ids=ids,
        encoder_hash=encoder.checkpoint_hash,
        encoder_spec=getattr(encoder, "spec", {}),
    )


class Trainer:
    """Epoch loop with step lr decay, CSV loss log, and resumable checkpoints.

    Per-epoch RNG substreams make a resumed run reproduce the uninterrupted
    trajectory exactly: checkpoints cut only at epoch boundaries, and each
    epoch reseeds batch order and noise draws from (run seed, epoch).
    """

    def __init__(self, model: UNet, data: TrainingSet, schedule: NoiseSchedule,
                 config: TrainingConfig, out_dir):
        if config.T_train != schedule.T:
            raise ValueError(f"T_train {config.T_train} != schedule.T {schedule.T}")
        self.model = model
        self.data = data
        self.schedule = schedule
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.epoch = 0  # last completed epoch

    def _lr_for_epoch(self, epoch: int) -> float:
        decays = (epoch - 1) // self.config.lr_decay_every
        return self.config.learning_rate * self.config.lr_decay_factor ** decays

    def run_epoch(self) -> float:
        """Train one epoch; returns its mean loss and appends to the loss log."""
        cfg = self.config
        epoch = self.epoch + 1
        lr = self._lr_for_epoch(epoch)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        gen = torch.Generator().manual_seed(substream_seed(cfg.seed, f"epoch{epoch}"))
        order = torch.randperm(self.data.x0.shape[0], generator=gen)
        losses = []
        log_path = self.out_dir / "loss.csv"
        new_log = not log_path.exists()
        with open(log_path, "a", newline="") as f:
            writer = csv.writer(f)
            if new_log:
                writer.writerow(["epoch", "step", "lr", "loss"])
            for step, start in enumerate(range(0, len(order), cfg.batch_size), 1):
                idx = order[start:start + cfg.batch_size]
                loss = training_loss(self.model, self.data.x0[idx], self.data.cond[idx],
                                     self.schedule, gen)
                self.optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
                self.optimizer.step()
                losses.append(loss.item())
                writer.writerow([epoch, step, f"{lr:.8g}", f"{loss.item():.8f}"])
        self.epoch = epoch
        return float(np.mean(losses))

    def train(self, epochs: int | None = None, checkpoint_every: int = 1) -> Path:
        """Run up to config.epochs (or the given count); returns the final checkpoint path."""
        target = epochs if epochs is not None else self.config.epochs
        path = self.out_dir / "checkpoint.gck"
        while self.epoch < target:
            mean_loss = self.run_epoch()
            log.info("epoch %d: mean loss %.5f", self.epoch, mean_loss)
            if self.epoch % checkpoint_every == 0 or self.epoch == target:
                self.save(path)
        return path

    def save(self, path) -> None:
        tensors = {f"model.{k}": v.detach().cpu().numpy() for k, v in self.model.state_dict().items()}
        state = self.optimizer.state_dict()
        step_counts = {}
        for pid, s in state["state"].items():
            name = self._param_name(pid)
            tensors[f"opt.{name}.exp_avg"] = s["exp_avg"].cpu().numpy()
            tensors[f"opt.{name}.exp_avg_sq"] = s["exp_avg_sq"].cpu().numpy()
            step_counts[name] = int(s["step"])
        header = {
            "config": self.model.config.to_dict(),
            "schedule": self.schedule.to_header(),
            "encoder_hash": self.data.encoder_hash,
            "encoder": self.data.encoder_spec,
            "epoch": self.epoch,
            "seed": self.config.seed,
            "optimizer": {"name": "adam", "lr": self.config.learning_rate,
                          "betas": [0.9, 0.999], "eps": 1e-8, "steps": step_counts},
        }
        ckpt.save_checkpoint(path, tensors, header)

    def _param_name(self, pid: int) -> str:
        names = [n for n, _ in self.model.named_parameters()]
        return names[pid]

    @staticmethod
    def resume(path, data: TrainingSet, config: TrainingConfig, out_dir) -> "Trainer":
        header, tensors = ckpt.load_checkpoint(path)
        model, schedule = load_denoiser(path)
        trainer = Trainer(model, data, schedule, config, out_dir)
        trainer.epoch = header["epoch"]
        # rebuild Adam moments so the resumed trajectory matches uninterrupted training
        opt_state = {"state": {}, "param_groups": trainer.optimizer.state_dict()["param_groups"]}
        names = [n for n, _ in model.named_parameters()]
        steps = header.get("optimizer", {}).get("steps", {})
        for pid, name in enumerate(names):
            if f"opt.{name}.exp_avg" in tensors:
                opt_state["state"][pid] = {
                    "step": torch.tensor(float(steps.get(name, 0))),
                    "exp_avg": torch.from_numpy(tensors[f"opt.{name}.exp_avg"]),
                    "exp_avg_sq": torch.from_numpy(tensors[f"opt.{name}.exp_avg_sq"]),
                }
        if opt_state["state"]:
            trainer.optimizer.load_state_dict(opt_state)
        return trainer


def load_denoiser(path) -> tuple[UNet, NoiseSchedule]:
    """Build the denoiser and schedule described by a checkpoint, loading weights.

    Rejects checkpoints whose tensor names or shapes disagree with the
    stored config.
    """
    header, tensors = ckpt.load_checkpoint(path)
    config = UNetConfig.from_dict(header["config"])
    model = UNet(config)
    state = model.state_dict()
    saved = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    if set(saved) != set(state):
        missing = sorted(set(state) - set(saved))[:5]
        extra = sorted(set(saved) - set(state))[:5]
        raise ValueError(f"checkpoint/config mismatch: missing {missing}, unexpected {extra}")
    for name, arr in saved.items():
        if tuple(arr.shape) != tuple(state[name].shape):
            raise ValueError(f"checkpoint/config mismatch: {name} shape {arr.shape} vs {tuple(state[name].shape)}")
    model.load_state_dict({k: torch.from_numpy(v) for k, v in saved.items()})
    model.eval()
    return model, NoiseSchedule.from_header(header["schedule"])


def _replicate_cond(cond: ConditioningPair | BatchConditioning, n: int) -> BatchConditioning:
    if isinstance(cond, ConditioningPair):
        return BatchConditioning.from_pairs([cond] * n)
    return cond


def _variant_noise(shape, seeds: list[int], stream: str) -> torch.Tensor:
    draws = []
    for s in seeds:
        gen = torch.Generator().manual_seed(substream_seed(s, stream))
        draws.append(torch.randn(shape, generator=gen))
    return torch.stack(draws)


@torch.no_grad()
def sample_ddpm(model: UNet, schedule: NoiseSchedule, cond, n: int, seed: int) -> torch.Tensor:
    """Ancestral sampling over all T steps; returns (n, 1, H, W) in [-1, 1].

    Variant i draws its noise from substreams of seed+i, so a given
    (seed, condition, index) always yields the same image.
    """
    model.eval()
    cond = _replicate_cond(cond, n)
    seeds = [seed + i for i in range(n)]
    size = model.config.image_size
    x = _variant_noise((1, size, size), seeds, "x_T")
    consts = posterior_constants(schedule)
    for t in range(schedule.T, 0, -1):
        t_batch = torch.full((n,), t, dtype=torch.long)
        eps_hat = model(x, t_batch, cond)
        if not torch.isfinite(eps_hat).all():
            raise RuntimeError(f"non-finite denoiser output at step t={t}")
        abar = float(schedule.alpha_bar[t - 1])
        # clamping x0_hat each step keeps the chain on the pixel range the
        # denoiser was trained on; without it the trajectory drifts in scale
        x0_hat = ((x - (1.0 - abar) ** 0.5 * eps_hat) / abar ** 0.5).clamp(-1.0, 1.0)
        mean = float(consts.coef_x0[t - 1]) * x0_hat + float(consts.coef_xt[t - 1]) * x
        if t > 1:
            z = _variant_noise((1, size, size), seeds, f"z{t}")
            x = mean + float(consts.sigma[t - 1]) * z
        else:
            x = mean
    return x.clamp(-1.0, 1.0)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Uniform-stride subsequence ending at T, e.g. [10, 20, ..., 1000]."""
    if steps > T or T % steps != 0:
        raise ValueError(f"steps={steps} must divide T={T} with a uniform stride")
    stride = T // steps
    return list(range(stride, T + 1, stride))


@torch.no_grad()
def sample_ddim(model: UNet, schedule: NoiseSchedule, cond, n: int, steps: int = 100,
                eta: float = 0.0, seed: int = 0) -> torch.Tensor:
    """Deterministic (eta=0) reduced-step sampling; returns (n, 1, H, W) in [-1, 1]."""
    model.eval()
    cond = _replicate_cond(cond, n)
    seeds = [seed + i for i in range(n)]
    size = model.config.image_size
    x = _variant_noise((1, size, size), seeds, "x_T")
    taus = ddim_timesteps(schedule.T, steps)
    for k in range(len(taus) - 1, -1, -1):
        t = taus[k]
        t_prev = taus[k - 1] if k > 0 else 0
        eps_hat = model(x, torch.full((n,), t, dtype=torch.long), cond)
        if not torch.isfinite(eps_hat).all():
            raise RuntimeError(f"non-finite denoiser output at step t={t}")
        abar = float(schedule.alpha_bar[t - 1])
        abar_prev = float(schedule.alpha_bar[t_prev - 1]) if t_prev > 0 else 1.0
        # clamp the denoised estimate and re-derive the noise consistent with
        # it, so the update never leaves the trained pixel range
        x0_hat = ((x - (1.0 - abar) ** 0.5 * eps_hat) / abar ** 0.5).clamp(-1.0, 1.0)
        eps_hat = (x - abar ** 0.5 * x0_hat) / (1.0 - abar) ** 0.5
        if eta > 0.0 and t_prev > 0:
            sigma = eta * ((1 - abar_prev) / (1 - abar)) ** 0.5 * (1 - abar / abar_prev) ** 0.5
            dir_coef = max(1.0 - abar_prev - sigma ** 2, 0.0) ** 0.5
            z = _variant_noise((1, size, size), seeds, f"z{t}")
            x = abar_prev ** 0.5 * x0_hat + dir_coef * eps_hat + sigma * z
        else:
            x = abar_prev ** 0.5 * x0_hat + (1.0 - abar_prev) ** 0.5 * eps_hat
    return x.clamp(-1.0, 1.0)


def image_to_png_bytes(img: torch.Tensor) -> bytes:
    """Quantize one [-1, 1] image (1, H, W) to an 8-bit grayscale PNG."""
    arr = img.detach().cpu().clamp(-1.0, 1.0).numpy()[0]
    arr = np.clip((arr + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()
