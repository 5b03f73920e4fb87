"""Isolation forest, GAN augmentation and Transformer window scoring for network anomaly detection."""

__version__ = "0.1.0"
