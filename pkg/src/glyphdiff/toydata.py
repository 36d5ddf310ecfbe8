"""Deterministic synthetic corpora for desk-scale runs and tests.

Renders letter glyphs with Pillow's built-in font, with per-font style
variation (scale, offset, stroke width), and writes them in the corpus
layout load_corpus() expects: one directory per font with A.png..Z.png and
a keywords.txt tag file.
"""

from __future__ import annotations

import string
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

KEYWORD_POOL = [
    "retro", "heavy", "narrow", "open-shade", "vintage", "horror", "fat",
    "elegant", "bold", "script", "poster", "modern", "fancy", "gothic",
    "serif", "rounded", "pixel", "ink", "wed", "calligraphy",
]


def _default_font(size: int) -> ImageFont.ImageFont:
    try:
        return ImageFont.load_default(size=size)
    except TypeError:  # older Pillow: fixed-size bitmap font only
        return ImageFont.load_default()


def render_letter(letter: str, size: int = 64, scale: float = 0.7,
                  dx: int = 0, dy: int = 0, stroke: int = 0, blur: float = 0.5) -> Image.Image:
    """One black-on-white glyph image with simple style knobs."""
    img = Image.new("L", (size, size), color=255)
    draw = ImageDraw.Draw(img)
    font = _default_font(int(size * scale))
    bbox = draw.textbbox((0, 0), letter, font=font, stroke_width=stroke)
    w, h = bbox[2] - bbox[0], bbox[3] - bbox[1]
    x = (size - w) // 2 - bbox[0] + dx
    y = (size - h) // 2 - bbox[1] + dy
    draw.text((x, y), letter, fill=0, font=font, stroke_width=stroke, stroke_fill=0)
    if blur > 0:
        img = img.filter(ImageFilter.GaussianBlur(blur))
    return img


def toy_font_styles(n_fonts: int, seed: int = 0) -> list[dict]:
    """Distinct, deterministic per-font render styles and keyword sets."""
    rng = np.random.default_rng(seed)
    styles = []
    for i in range(n_fonts):
        n_kw = int(rng.integers(5, 9))
        picks = rng.choice(len(KEYWORD_POOL), size=n_kw, replace=False)
        styles.append(
            {
                "font_id": f"toyfont-{i:03d}",
                "scale": 0.55 + 0.12 * (i % 4),
                "dx": int(rng.integers(-3, 4)),
                "dy": int(rng.integers(-3, 4)),
                "stroke": i % 3,
                "keywords": [KEYWORD_POOL[j] for j in sorted(picks)],
            }
        )
    return styles


def write_toy_corpus(root, n_fonts: int = 4, seed: int = 0, size: int = 64) -> list[str]:
    """Write a synthetic corpus under root; returns the font ids."""
    root = Path(root)
    ids = []
    for style in toy_font_styles(n_fonts, seed):
        font_dir = root / style["font_id"]
        font_dir.mkdir(parents=True, exist_ok=True)
        for letter in string.ascii_uppercase:
            img = render_letter(letter, size=size, scale=style["scale"], dx=style["dx"],
                                dy=style["dy"], stroke=style["stroke"])
            img.save(font_dir / f"{letter}.png")
        (font_dir / "keywords.txt").write_text("\n".join(style["keywords"]) + "\n")
        ids.append(style["font_id"])
    return ids


def bar_glyph(width: int, height: int, canvas: int = 64) -> Image.Image:
    """White canvas with a centered black bar of exact ink bounding box (width, height)."""
    img = Image.new("L", (canvas, canvas), color=255)
    draw = ImageDraw.Draw(img)
    x0 = (canvas - width) // 2
    y0 = (canvas - height) // 2
    draw.rectangle([x0, y0, x0 + width - 1, y0 + height - 1], fill=0)
    return img
