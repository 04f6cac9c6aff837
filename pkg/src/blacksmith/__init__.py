"""Adversarial training for small Vision Transformers by randomly interleaving
full-depth single-step updates (Hammering) with first-half two-step updates (Forging)."""

__version__ = "0.1.0"
