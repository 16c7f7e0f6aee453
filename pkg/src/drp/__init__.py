"""Personalized review generation conditioned on how a user differs from others."""

__version__ = "0.1.0"
