"""Trainer for the cavity-feedback environment bridge."""

__version__ = "0.1.0"
