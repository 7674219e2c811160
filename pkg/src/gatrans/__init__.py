"""Bucketed global-attention segmentation stack with adversarial training."""

__version__ = "0.1.0"
