"""Lookahead best-arm identification in adversarial bandits under memory limits."""

__version__ = "0.1.0"
