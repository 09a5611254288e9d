"""Grounded-instruction parsing: extract ordered tasks with typed, grounded
arguments from natural-language robot commands."""

__version__ = "0.1.0"
