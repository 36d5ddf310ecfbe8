"""FID / Intra-FID computation and the two evaluation protocols.

Feature extraction is pluggable: the conventional 2048-dim pool features of
the standard FID reference network for paper-comparable numbers, or a tiny
random-projection extractor for fast desk-scale checks. Moments accumulate
in a streaming, associatively mergeable form.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import keywords_to_sentence


@dataclass
class FeatureMoments:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 samples for covariance, got {self.n}")


class MomentAccumulator:
    """Streaming mean/covariance over feature batches.

    Accumulates sums and outer-product sums in float64; merges of partial
    accumulators are exact sums, hence order-insensitive.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.n = 0
        self._sum = np.zeros(dim, dtype=np.float64)
        self._outer = np.zeros((dim, dim), dtype=np.float64)

    def update(self, features: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) features, got {features.shape}")
        self.n += features.shape[0]
        self._sum += features.sum(axis=0)
        self._outer += features.T @ features

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch in merge")
        out = MomentAccumulator(self.dim)
        out.n = self.n + other.n
        out._sum = self._sum + other._sum
        out._outer = self._outer + other._outer
        return out

    def finalize(self) -> FeatureMoments:
        if self.n < 2:
            raise ValueError(f"need at least 2 samples, got {self.n}")
        mean = self._sum / self.n
        cov = (self._outer - self.n * np.outer(mean, mean)) / (self.n - 1)
        cov = (cov + cov.T) / 2.0
        return FeatureMoments(mean=mean, cov=cov, n=self.n)


def extract_moments(images, extractor, batch_size: int = 64) -> FeatureMoments:
    """Stream images through the extractor and accumulate feature moments."""
    acc = None
    batch = []
    for img in images:
        batch.append(np.asarray(img, dtype=np.float32))
        if len(batch) == batch_size:
            feats = extractor(np.stack(batch))
            if acc is None:
                acc = MomentAccumulator(feats.shape[1])
            acc.update(feats)
            batch = []
    if batch:
        feats = extractor(np.stack(batch))
        if acc is None:
            acc = MomentAccumulator(feats.shape[1])
        acc.update(feats)
    if acc is None:
        raise ValueError("no images given")
    return acc.finalize()


def _psd_sqrt(mat: np.ndarray, eig_tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -eig_tol * max(1.0, abs(vals.max())):
        raise ValueError(f"matrix is not PSD within tolerance (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_moments(a: FeatureMoments, b: FeatureMoments) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The matrix square root uses the symmetric form
    (S_a^(1/2) S_b S_a^(1/2))^(1/2) via eigendecomposition; tiny negative
    eigenvalues are clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    vals = np.where(vals > -1e-8, np.clip(vals, 0.0, None), vals)
    if vals.min() < 0:
        raise ValueError(f"cross-covariance eigenvalues below clamp tolerance: {vals.min():.3e}")
    tr_sqrt = np.sqrt(vals).sum()
    fid = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt)
    if not np.isfinite(fid):
        raise ValueError("non-finite FID")
    return max(fid, 0.0)


class ToyFeatureExtractor:
    """Fixed random projection of flattened pixels to a small feature space.

    Deterministic per (dim, seed); intended for desk-scale pipeline tests,
    not for paper-comparable numbers.
    """

    def __init__(self, dim: int = 16, image_size: int = 32, seed: int = 0):
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((image_size * image_size, dim)) / np.sqrt(image_size * image_size)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        flat = np.asarray(images, dtype=np.float64).reshape(images.shape[0], -1)
        return flat @ self._proj


class InceptionFeatureExtractor:
    """2048-dim pool features of the conventional FID reference network.

    Grayscale glyphs are replicated to 3 channels and resized to the
    network's input size. Requires torchvision and its pretrained weights.
    """

    def __init__(self, device: str = "cpu"):
        import torch
        from torchvision.models import Inception_V3_Weights, inception_v3

        self._torch = torch
        self.dim = 2048
        self.device = device
        self.model = inception_v3(weights=Inception_V3_Weights.DEFAULT)
        self.model.fc = torch.nn.Identity()
        self.model.to(device).eval()

    def __call__(self, images: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = torch.from_numpy(np.asarray(images, dtype=np.float32))
        if x.ndim == 3:
            x = x[:, None]
        x = x.repeat(1, 3, 1, 1).to(self.device)
        x = torch.nn.functional.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
        with torch.no_grad():
            feats = self.model(x)
        return feats.cpu().numpy()


def protocol_global_fid(manifest: dict, glyphs: dict[str, dict[str, np.ndarray]],
                        generate, extractor, n_fonts: int = 5000, seed: int = 0) -> dict:
    """Whole-corpus FID: per selected font, generate all 26 letters from its
    full keyword set; compare against the real glyphs of the same fonts.

    `generate(letter, keywords, seed) -> (H, W) array in [-1, 1]`.
    """
    fonts = manifest["fonts"]
    if n_fonts > len(fonts):
        raise ValueError(f"n_fonts={n_fonts} exceeds corpus size {len(fonts)}")
    rng = np.random.default_rng(seed)
    selected = [fonts[i] for i in rng.choice(len(fonts), size=n_fonts, replace=False)]

    real = extract_moments(
        (glyphs[e["font_id"]][letter] for e in selected for letter in sorted(e["glyphs"])),
        extractor,
    )
    fake = extract_moments(
        (generate(letter, e["keywords"], seed=seed + 26 * i + j)
         for i, e in enumerate(selected)
         for j, letter in enumerate(sorted(e["glyphs"]))),
        extractor,
    )
    return {"protocol": "global_fid", "seed": seed, "n": real.n, "fid": fid_from_moments(real, fake)}


def protocol_intra_fid(manifest: dict, glyphs: dict[str, dict[str, np.ndarray]],
                       generate, extractor, keyword_min_fonts: int = 200,
                       fonts_per_keyword: int = 200, seed: int = 0) -> dict:
    """Mean per-keyword FID over keywords tagged on more than `keyword_min_fonts` fonts.

    Per qualifying keyword, generates 26 x fonts_per_keyword images
    conditioned on that single keyword only, against the real glyphs of the
    fonts carrying it.
    """
    by_keyword: dict[str, list[dict]] = {}
    for entry in manifest["fonts"]:
        for kw in entry["keywords"]:
            by_keyword.setdefault(kw, []).append(entry)
    qualifying = sorted(kw for kw, entries in by_keyword.items() if len(entries) > keyword_min_fonts)
    if not qualifying:
        raise ValueError(f"no keyword is tagged on more than {keyword_min_fonts} fonts")

    rows = []
    for k_idx, kw in enumerate(qualifying):
        entries = by_keyword[kw]
        real = extract_moments(
            (glyphs[e["font_id"]][letter] for e in entries for letter in sorted(e["glyphs"])),
            extractor,
        )
        n_gen_fonts = min(fonts_per_keyword, len(entries))
        fake = extract_moments(
            (generate(letter, [kw], seed=seed + 100_000 * k_idx + 26 * i + j)
             for i in range(n_gen_fonts)
             for j, letter in enumerate("ABCDEFGHIJKLMNOPQRSTUVWXYZ")),
            extractor,
        )
        rows.append({"keyword": kw, "n_fonts": len(entries), "fid": fid_from_moments(real, fake)})
    mean_fid = float(np.mean([r["fid"] for r in rows]))
    return {"protocol": "intra_fid", "seed": seed, "n": len(rows), "fid": mean_fid, "per_keyword": rows}


def write_report(report: dict, json_path, csv_path=None) -> None:
    """JSON summary plus, for intra-FID, a per-keyword CSV table."""
    summary = {k: v for k, v in report.items() if k != "per_keyword"}
    Path(json_path).write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    if csv_path is not None and "per_keyword" in report:
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["keyword", "n_fonts", "fid"])
            writer.writeheader()
            writer.writerows(report["per_keyword"])


def sentence_for(keywords: list[str]) -> str:
    return keywords_to_sentence(keywords)
