"""Compliance Lab - seeded simulator for personalised compliance pricing."""

__version__ = "0.1.0"
