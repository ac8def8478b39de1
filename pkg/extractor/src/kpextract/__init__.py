"""Transformer embedding extraction into KPEB stores."""

__version__ = "0.1.0"
