"""Unit-based pre-training for attention seq2seq text-to-speech."""

__version__ = "0.1.0"
