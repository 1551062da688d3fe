"""Transformer decoders that generate a translation together with its dependency tree."""

__version__ = "0.1.0"
