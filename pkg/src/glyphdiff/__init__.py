"""Impression-conditioned glyph diffusion toolkit.

Generates 32x32 grayscale Latin capital glyphs from a letter plus a
variable-length set of impression keywords, using a dual cross-attention
U-Net denoiser trained with the DDPM objective and sampled with DDPM or
deterministic DDIM.
"""

__version__ = "0.1.0"
