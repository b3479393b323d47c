"""Multimodal Chinese spell checking: semantic, phonetic, and glyph
encoders fused by learned gates, trained and evaluated on synthetic
confusion corpora. Pure numpy/scipy; no GPU or external model weights.
"""

__version__ = "0.1.0"
