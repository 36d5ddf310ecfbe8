"""Corpus ingestion, filtering, preprocessing, splitting, and the manifest.

Expected corpus layout: one directory per font under the root, containing a
glyph image per capital letter (``A.png`` .. ``Z.png``, any raster format
Pillow can decode) and a tag file (``keywords.txt`` or ``tags.txt``) with
keywords either one per line or comma-separated (auto-detected).

Filtering rules: a font is kept only if it has at least 5 keywords after
normalization and no glyph whose tight ink bounding box is wider than
twice its height.
"""

from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

LETTERS = string.ascii_uppercase
IMAGE_SIZE = 32
# ink = pixels darker than mid-gray on the 8-bit scale
INK_THRESHOLD = 128
TAG_FILENAMES = ("keywords.txt", "tags.txt")
GLYPH_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff")


@dataclass
class GlyphImage:
    """One preprocessed glyph: 32x32 grayscale, ink=-1 / background=+1."""

    pixels: np.ndarray
    source_width: int
    source_height: int

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"glyph pixels must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {self.pixels.shape}")


@dataclass
class FontRecord:
    """One font: id, the 26 capital glyphs, and its impression keywords."""

    font_id: str
    glyphs: dict[str, GlyphImage]
    keywords: list[str]


@dataclass
class DatasetSplit:
    train_fonts: list[str]
    test_fonts: list[str]
    seed: int


@dataclass
class CorpusStats:
    n_images: int
    n_fonts: int
    n_unique_keywords: int
    keywords_per_font_min: int
    keywords_per_font_avg: float
    keywords_per_font_max: int


def normalize_keywords(raw: list[str]) -> list[str]:
    """Lowercase, trim, drop empties, dedupe keeping first occurrence."""
    seen = set()
    out = []
    for kw in raw:
        kw = kw.strip().lower()
        if kw and kw not in seen:
            seen.add(kw)
            out.append(kw)
    return out


def _read_tag_file(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    if "," in text:
        raw = [part for line in text.splitlines() for part in line.split(",")]
    else:
        raw = text.splitlines()
    return normalize_keywords(raw)


def ink_bounding_box(gray: np.ndarray) -> tuple[int, int]:
    """(width, height) of the tight bounding box of ink pixels.

    A glyph with no ink at all (blank image) falls back to the full image
    extent, which never trips the aspect-ratio filter on sane inputs.
    """
    ys, xs = np.nonzero(gray < INK_THRESHOLD)
    if len(ys) == 0:
        h, w = gray.shape
        return w, h
    return int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def preprocess_glyph(raw) -> GlyphImage:
    """Grayscale, pad to square about the center, resize to 32x32, scale to [-1, 1].

    Accepts a path, a PIL image, or a 2-D uint8 array. Padding uses the
    white background value so off-square inputs keep their aspect ratio.
    """
    if isinstance(raw, (str, Path)):
        try:
            img = Image.open(raw)
            img.load()
        except (UnidentifiedImageError, OSError) as e:
            raise ValueError(f"cannot decode glyph image {raw}: {e}") from e
    elif isinstance(raw, Image.Image):
        img = raw
    else:
        img = Image.fromarray(np.asarray(raw, dtype=np.uint8))
    img = img.convert("L")
    if img.width == 0 or img.height == 0:
        raise ValueError("glyph image has zero extent")

    gray = np.asarray(img, dtype=np.uint8)
    src_w, src_h = ink_bounding_box(gray)

    side = max(img.width, img.height)
    if img.width != img.height:
        canvas = Image.new("L", (side, side), color=255)
        canvas.paste(img, ((side - img.width) // 2, (side - img.height) // 2))
        img = canvas
    img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)

    pixels = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return GlyphImage(pixels=pixels, source_width=src_w, source_height=src_h)


def load_corpus(root_path, manifest: Path | None = None) -> list[FontRecord]:
    """Load every complete font under root_path, ordered by font_id.

    A font missing any of the 26 capital glyphs, or with an unreadable tag
    file, is skipped with a warning. Keywords are normalized but NOT
    filtered here; see filter_fonts.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} is not a directory")
    records = []
    for font_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        font_id = font_dir.name
        tag_path = next((font_dir / n for n in TAG_FILENAMES if (font_dir / n).is_file()), None)
        if tag_path is None:
            log.warning("font %s: no tag file, skipped", font_id)
            continue
        try:
            keywords = _read_tag_file(tag_path)
        except OSError as e:
            log.warning("font %s: unreadable tag file (%s), skipped", font_id, e)
            continue

        glyphs = {}
        for letter in LETTERS:
            path = next(
                (font_dir / f"{letter}{ext}" for ext in GLYPH_EXTENSIONS if (font_dir / f"{letter}{ext}").is_file()),
                None,
            )
            if path is None:
                break
            try:
                glyphs[letter] = preprocess_glyph(path)
            except ValueError as e:
                log.warning("font %s: glyph %s unreadable (%s)", font_id, letter, e)
                break
        if len(glyphs) != 26:
            missing = sorted(set(LETTERS) - set(glyphs))
            log.warning("font %s: missing glyphs %s, skipped", font_id, "".join(missing))
            continue
        records.append(FontRecord(font_id=font_id, glyphs=glyphs, keywords=keywords))
    return records


def filter_fonts(fonts: list[FontRecord]) -> list[FontRecord]:
    """Keep fonts with >=5 keywords and every glyph aspect ratio <= 2:1."""
    kept = []
    for font in fonts:
        if len(font.keywords) < 5:
            continue
        ok = True
        for glyph in font.glyphs.values():
            if glyph.source_height <= 0 or glyph.source_width / glyph.source_height > 2.0:
                ok = False
                break
        if ok:
            kept.append(font)
    return kept


def keywords_to_sentence(keywords: list[str]) -> str:
    """Join keywords with ", " preserving order."""
    if not keywords:
        raise ValueError("keyword list is empty")
    return ", ".join(keywords)


def split_corpus(fonts: list[FontRecord], seed: int) -> DatasetSplit:
    """Seed-deterministic shuffle; first round(0.9*N) fonts train, rest test."""
    # N >= 6 guarantees both splits are non-empty under round(0.9*N)
    if len(fonts) < 6:
        raise ValueError(f"need at least 6 fonts to split, got {len(fonts)}")
    ids = [f.font_id for f in fonts]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(np.floor(0.9 * len(ids) + 0.5))
    return DatasetSplit(train_fonts=shuffled[:n_train], test_fonts=shuffled[n_train:], seed=seed)


def compute_stats(fonts: list[FontRecord]) -> CorpusStats:
    if not fonts:
        raise ValueError("empty corpus")
    counts = [len(f.keywords) for f in fonts]
    unique = set()
    for f in fonts:
        unique.update(f.keywords)
    return CorpusStats(
        n_images=26 * len(fonts),
        n_fonts=len(fonts),
        n_unique_keywords=len(unique),
        keywords_per_font_min=min(counts),
        keywords_per_font_avg=round(sum(counts) / len(counts), 1),
        keywords_per_font_max=max(counts),
    )


def format_stats_table(train: CorpusStats, test: CorpusStats | None = None) -> str:
    """Plain-text stats table: images, fonts, unique keywords, per-font min/avg/max."""
    header = f"{'Set':<10} {'Images':>9} {'Fonts':>7} {'Imp. K.':>8} {'Min.':>5} {'Avg.':>6} {'Max.':>5}"
    lines = [header]
    for name, s in (("Train Set", train), ("Test Set", test)):
        if s is None:
            continue
        lines.append(
            f"{name:<10} {s.n_images:>9,} {s.n_fonts:>7,} {s.n_unique_keywords:>8,} "
            f"{s.keywords_per_font_min:>5} {s.keywords_per_font_avg:>6.1f} {s.keywords_per_font_max:>5}"
        )
    return "\n".join(lines) + "\n"


def glyph_to_png_array(glyph: GlyphImage) -> np.ndarray:
    """Map [-1, 1] pixels back to uint8 for the PNG cache."""
    return np.clip((glyph.pixels + 1.0) * 127.5, 0, 255).round().astype(np.uint8)


def build_dataset(root: Path, out: Path, seed: int) -> dict:
    """Full pipeline: load, filter, split, write glyph cache + manifest + stats.

    Returns the manifest dict. The manifest is written with sorted keys and
    fixed separators so identical inputs hash identically.
    """
    out = Path(out)
    fonts = load_corpus(root)
    fonts = filter_fonts(fonts)
    split = split_corpus(fonts, seed)
    split_of = {fid: "train" for fid in split.train_fonts}
    split_of.update({fid: "test" for fid in split.test_fonts})

    glyph_dir = out / "glyphs"
    glyph_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for font in fonts:
        font_dir = glyph_dir / font.font_id
        font_dir.mkdir(exist_ok=True)
        paths = {}
        for letter, glyph in font.glyphs.items():
            rel = f"glyphs/{font.font_id}/{letter}.png"
            Image.fromarray(glyph_to_png_array(glyph), mode="L").save(out / rel)
            paths[letter] = rel
        entries.append(
            {
                "font_id": font.font_id,
                "split": split_of[font.font_id],
                "keywords": font.keywords,
                "glyphs": paths,
            }
        )

    manifest = {"seed": seed, "image_size": IMAGE_SIZE, "fonts": entries}
    write_manifest(manifest, out / "manifest.json")

    train = [f for f in fonts if split_of[f.font_id] == "train"]
    test = [f for f in fonts if split_of[f.font_id] == "test"]
    table = format_stats_table(compute_stats(train), compute_stats(test) if test else None)
    (out / "stats.txt").write_text(table, encoding="utf-8")
    return manifest


def write_manifest(manifest: dict, path: Path) -> None:
    path = Path(path)
    path.write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ": "), indent=1) + "\n",
        encoding="utf-8",
    )


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def manifest_keyword_counts(manifest: dict) -> list[tuple[str, int]]:
    """(keyword, font count) pairs sorted by descending count, then name."""
    counts: dict[str, int] = {}
    for entry in manifest["fonts"]:
        for kw in entry["keywords"]:
            counts[kw] = counts.get(kw, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def load_manifest_glyphs(manifest: dict, base_dir) -> dict[str, dict[str, np.ndarray]]:
    """font_id -> letter -> float32 [-1,1] array, read from the PNG cache."""
    base = Path(base_dir)
    out: dict[str, dict[str, np.ndarray]] = {}
    for entry in manifest["fonts"]:
        glyphs = {}
        for letter, rel in entry["glyphs"].items():
            arr = np.asarray(Image.open(base / rel).convert("L"), dtype=np.float32)
            glyphs[letter] = arr / 127.5 - 1.0
        out[entry["font_id"]] = glyphs
    return out
