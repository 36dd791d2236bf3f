"""Survival modelling of trust-rating times in pick-and-place sessions."""

__version__ = "0.1.0"
