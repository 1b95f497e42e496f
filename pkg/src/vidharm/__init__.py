"""Temporally coherent video harmonization with a pixel-wise disharmony discriminator."""

__version__ = "0.1.0"
