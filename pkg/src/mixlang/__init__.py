"""Mixed-language training toolkit for zero-shot cross-lingual dialogue models."""

__version__ = "0.1.0"
