"""Attention-pooled fully convolutional network for variable-length spectrograms."""

__version__ = "0.1.0"

CLASS_NAMES = ("neutral", "happy", "sad", "angry")
