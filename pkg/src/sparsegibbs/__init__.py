"""Spin models, colorings and XORSAT on sparse graphs."""

__version__ = "0.1.0"
