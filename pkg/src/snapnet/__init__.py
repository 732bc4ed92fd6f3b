"""Compiler and simulator for a stateful one-big-switch policy language."""

__version__ = "0.1.0"
