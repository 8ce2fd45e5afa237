"""Planar multi-link inverted-pendulum simulator with modular DEC posture control."""

__version__ = "0.1.0"
