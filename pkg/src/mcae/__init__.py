"""Masked contrastive autoencoder pre-training for cross-domain face anti-spoofing."""

__version__ = "0.1.0"
