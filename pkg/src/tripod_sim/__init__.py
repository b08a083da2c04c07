"""Tripod-EIT storage, time-bin splitting and retrieval modulation of weak signal pulses."""

__version__ = "0.1.0"
