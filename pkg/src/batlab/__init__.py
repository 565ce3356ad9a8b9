"""Adversarial fine-tuning of a small BERT-style encoder for aspect-based sentiment analysis."""

__version__ = "0.1.0"
