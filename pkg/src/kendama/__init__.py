"""Swing-up planning and learned-support tube MPC for a cup-and-ball catch."""

__version__ = "0.1.0"
