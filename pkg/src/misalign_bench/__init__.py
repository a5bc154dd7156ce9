"""Deterministic evaluation harness: degrade driving-scene images, score
segmentation quality, parse vision-language responses, and quantify how
perception quality decouples from language-level reliability."""

__version__ = "0.1.0"
