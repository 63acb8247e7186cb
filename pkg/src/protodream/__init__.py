"""Prototype-clustered world models for pixel control."""

__version__ = "0.1.0"
