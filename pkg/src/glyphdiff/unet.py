"""The conditional U-Net noise predictor.

Encoder (4 blocks, 32->16->8->4->2), bottleneck with self-attention, and a
mirrored decoder with skip concatenation. Every stage runs its ResBlocks,
then impression cross-attention, then letter cross-attention, in that
order. Timestep information enters additively inside every ResBlock via a
sinusoidal embedding passed through a 2-layer projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .text import ConditioningPair, pad_impression_batch


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 64
    channel_multipliers: tuple[int, int, int, int] = (1, 2, 4, 4)
    attention_heads: int = 4
    time_embed_dim: int = 0  # 0 -> 4 * base_channels
    text_dim: int = 768
    image_size: int = 32
    resblocks_per_stage: int = 2

    def __post_init__(self):
        if len(self.channel_multipliers) != 4:
            raise ValueError("exactly 4 encoder blocks required (mirrored decoder)")
        if self.time_embed_dim == 0:
            object.__setattr__(self, "time_embed_dim", 4 * self.base_channels)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "channel_multipliers": list(self.channel_multipliers),
            "attention_heads": self.attention_heads,
            "time_embed_dim": self.time_embed_dim,
            "text_dim": self.text_dim,
            "image_size": self.image_size,
            "resblocks_per_stage": self.resblocks_per_stage,
        }

    @staticmethod
    def from_dict(d: dict) -> "UNetConfig":
        d = dict(d)
        d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return UNetConfig(**d)


@dataclass
class BatchConditioning:
    """Batched dual condition tensors for the denoiser."""

    letter: Tensor       # (B, 3, D)
    letter_mask: Tensor  # (B, 3) bool
    imp: Tensor          # (B, L, D)
    imp_mask: Tensor     # (B, L) bool

    @staticmethod
    def from_pairs(pairs: list[ConditioningPair], device="cpu") -> "BatchConditioning":
        letter = np.stack([p.letter.vectors for p in pairs])
        letter_mask = np.stack([p.letter.mask for p in pairs])
        imp, imp_mask = pad_impression_batch([p.impressions for p in pairs])
        return BatchConditioning(
            letter=torch.from_numpy(letter).to(device),
            letter_mask=torch.from_numpy(letter_mask).to(device),
            imp=torch.from_numpy(imp).to(device),
            imp_mask=torch.from_numpy(imp_mask).to(device),
        )

    def __getitem__(self, idx) -> "BatchConditioning":
        if isinstance(idx, int):
            idx = [idx]
        idx = torch.as_tensor(idx, dtype=torch.long)
        return BatchConditioning(
            letter=self.letter[idx], letter_mask=self.letter_mask[idx],
            imp=self.imp[idx], imp_mask=self.imp_mask[idx],
        )


def timestep_embedding(t: Tensor, dim: int) -> Tensor:
    """Sinusoidal encoding of integer steps t (shape (B,)) at `dim` channels.

    Channel i of the first half is sin(t * 10000^(-i/(half-1))); the second
    half holds the matching cosines. dim must be even.
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    t = t.float()
    if half == 1:
        freqs = torch.ones(1, device=t.device)
    else:
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, device=t.device) / (half - 1))
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _norm(channels: int) -> nn.GroupNorm:
    groups = next(g for g in (32, 16, 8, 4, 2, 1) if channels % g == 0)
    return nn.GroupNorm(groups, channels)


class ResBlock(nn.Module):
    """Two conv layers with group norm, timestep injection, and a residual path.

    The final conv is zero-initialized, so at initialization the block is
    exactly its shortcut. A 1x1 projection handles channel changes.
    """

    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        self.norm1 = _norm(in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = _norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        if in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.shortcut = nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: Tensor, t_emb: Tensor) -> Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.time_proj(self.act(t_emb))[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.shortcut(x)


class CrossAttention(nn.Module):
    """Multi-head attention from spatial positions onto a text sequence.

    Queries come from the (pre-normalized) flattened feature map, keys and
    values from the context vectors; padding positions are excluded by the
    mask. The output projection is zero-initialized, so the residual add is
    an identity at initialization.
    """

    def __init__(self, channels: int, ctx_dim: int, heads: int):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.norm = _norm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x: Tensor, ctx: Tensor, mask: Tensor) -> Tensor:
        B, C, H, W = x.shape
        if mask.dtype != torch.bool:
            mask = mask.bool()
        if not mask.any(dim=1).all():
            raise ValueError("cross-attention context is fully masked for some batch item")
        q_in = self.norm(x).reshape(B, C, H * W).transpose(1, 2)  # (B, HW, C)
        q = self.to_q(q_in)
        k = self.to_k(ctx)
        v = self.to_v(ctx)

        d = C // self.heads
        q = q.reshape(B, -1, self.heads, d).transpose(1, 2)  # (B, h, HW, d)
        k = k.reshape(B, -1, self.heads, d).transpose(1, 2)
        v = v.reshape(B, -1, self.heads, d).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(d)  # (B, h, HW, L)
        attn = attn.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = attn.softmax(dim=-1)
        out = attn @ v  # (B, h, HW, d)
        out = out.transpose(1, 2).reshape(B, H * W, C)
        out = self.to_out(out)
        return x + out.transpose(1, 2).reshape(B, C, H, W)


class SelfAttention(nn.Module):
    """Multi-head self-attention over spatial tokens, residual add."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.norm = _norm(channels)
        self.to_qkv = nn.Linear(channels, 3 * channels, bias=False)
        self.to_out = nn.Linear(channels, channels)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        h_in = self.norm(x).reshape(B, C, H * W).transpose(1, 2)
        q, k, v = self.to_qkv(h_in).chunk(3, dim=-1)
        d = C // self.heads
        q = q.reshape(B, -1, self.heads, d).transpose(1, 2)
        k = k.reshape(B, -1, self.heads, d).transpose(1, 2)
        v = v.reshape(B, -1, self.heads, d).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(d)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, H * W, C)
        out = self.to_out(out)
        return x + out.transpose(1, 2).reshape(B, C, H, W)


class _Stage(nn.Module):
    """ResBlocks, then impression cross-attention, then letter cross-attention.

    The attribute order (resblocks -> self_attn -> cross_attn_imp ->
    cross_attn_let) is the structural contract checked by
    dual_attention_order().
    """

    def __init__(self, in_ch: int, out_ch: int, cfg: UNetConfig, with_self_attn: bool = False):
        super().__init__()
        blocks = []
        ch = in_ch
        for _ in range(cfg.resblocks_per_stage):
            blocks.append(ResBlock(ch, out_ch, cfg.time_embed_dim))
            ch = out_ch
        self.resblocks = nn.ModuleList(blocks)
        self.self_attn = SelfAttention(out_ch, cfg.attention_heads) if with_self_attn else None
        self.cross_attn_imp = CrossAttention(out_ch, cfg.text_dim, cfg.attention_heads)
        self.cross_attn_let = CrossAttention(out_ch, cfg.text_dim, cfg.attention_heads)

    def forward(self, x: Tensor, t_emb: Tensor, cond: BatchConditioning) -> Tensor:
        for block in self.resblocks:
            x = block(x, t_emb)
        if self.self_attn is not None:
            x = self.self_attn(x)
        x = self.cross_attn_imp(x, cond.imp, cond.imp_mask)
        x = self.cross_attn_let(x, cond.letter, cond.letter_mask)
        return x


class UNet(nn.Module):
    """Noise predictor mapping (x_t, t, dual condition) -> estimated noise."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        cfg = config
        chs = [cfg.base_channels * m for m in cfg.channel_multipliers]

        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, cfg.time_embed_dim),
            nn.SiLU(),
            nn.Linear(cfg.time_embed_dim, cfg.time_embed_dim),
        )
        self.stem = nn.Conv2d(1, cfg.base_channels, 3, padding=1)

        self.encoder = nn.ModuleList()
        self.downs = nn.ModuleList()
        in_ch = cfg.base_channels
        for ch in chs:
            self.encoder.append(_Stage(in_ch, ch, cfg))
            self.downs.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            in_ch = ch

        self.bottleneck = _Stage(chs[-1], chs[-1], cfg, with_self_attn=True)

        self.ups = nn.ModuleList()
        self.decoder = nn.ModuleList()
        dec_out = chs[-2::-1] + [cfg.base_channels]  # mirrors the encoder widths
        ch = chs[-1]
        for skip_ch, out_ch in zip(chs[::-1], dec_out):
            self.ups.append(nn.ConvTranspose2d(ch, ch, 4, stride=2, padding=1))
            self.decoder.append(_Stage(ch + skip_ch, out_ch, cfg))
            ch = out_ch

        self.out_norm = _norm(ch)
        self.out_act = nn.SiLU()
        self.out_conv = nn.Conv2d(ch, 1, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def _check_inputs(self, x: Tensor, cond: BatchConditioning) -> None:
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (s, s):
            raise ValueError(f"input: expected (B, 1, {s}, {s}), got {tuple(x.shape)}")
        for name, t in (("impression", cond.imp), ("letter", cond.letter)):
            if t.shape[-1] != self.config.text_dim:
                raise ValueError(
                    f"{name} conditioning: dim {t.shape[-1]} != config.text_dim {self.config.text_dim}"
                )
            if t.shape[0] != x.shape[0]:
                raise ValueError(f"{name} conditioning: batch {t.shape[0]} != input batch {x.shape[0]}")

    def forward(self, x: Tensor, t: Tensor, cond: BatchConditioning) -> Tensor:
        self._check_inputs(x, cond)
        t_emb = self.time_mlp(timestep_embedding(t, self.config.base_channels).to(x.dtype))

        h = self.stem(x)
        size = self.config.image_size
        skips = []
        for stage, down in zip(self.encoder, self.downs):
            h = stage(h, t_emb, cond)
            assert h.shape[2:] == (size, size), f"encoder stage at {size}: got {tuple(h.shape)}"
            skips.append(h)
            h = down(h)
            size //= 2
        assert size == self.config.image_size // 16

        h = self.bottleneck(h, t_emb, cond)
        assert h.shape[2:] == (size, size), f"bottleneck: got {tuple(h.shape)}"

        for up, stage, skip in zip(self.ups, self.decoder, reversed(skips)):
            h = up(h)
            size *= 2
            if h.shape[2:] != skip.shape[2:]:
                raise ValueError(f"decoder stage at {size}: upsampled {tuple(h.shape)} vs skip {tuple(skip.shape)}")
            h = stage(torch.cat([h, skip], dim=1), t_emb, cond)
            assert h.shape[2:] == (size, size), f"decoder stage at {size}: got {tuple(h.shape)}"

        return self.out_conv(self.out_act(self.out_norm(h)))


def parameter_count(config: UNetConfig) -> int:
    """Total learnable parameter count for a config."""
    model = UNet(config)
    return sum(p.numel() for p in model.parameters())


def dual_attention_order(model: UNet) -> list[str]:
    """Verify structurally that every stage attends impression before letter.

    Returns the list of stage names checked; raises if any stage violates
    the ordering or lacks either attention module.
    """
    stages = (
        [(f"encoder.{i}", s) for i, s in enumerate(model.encoder)]
        + [("bottleneck", model.bottleneck)]
        + [(f"decoder.{i}", s) for i, s in enumerate(model.decoder)]
    )
    checked = []
    for name, stage in stages:
        names = [n for n, _ in stage.named_children()]
        if "cross_attn_imp" not in names or "cross_attn_let" not in names:
            raise AssertionError(f"stage {name}: missing a cross-attention module")
        if names.index("cross_attn_imp") > names.index("cross_attn_let"):
            raise AssertionError(f"stage {name}: letter attention precedes impression attention")
        checked.append(name)
    return checked
