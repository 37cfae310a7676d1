"""Desk-scale message passing with speedup analysis and prediction."""

from .runtime import ANY_SOURCE, ANY_TAG, Comm, Status, spawn_world, wtime

__all__ = ["ANY_SOURCE", "ANY_TAG", "Comm", "Status", "spawn_world", "wtime"]
__version__ = "0.1.0"
