"""Cavity Fock-superposition preparation via weak-measurement feedback."""

__version__ = "0.1.0"
