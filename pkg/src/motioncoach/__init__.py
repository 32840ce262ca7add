"""Desk-scale corrective-instruction generation for human motion."""

__version__ = "0.1.0"
