"""Generic event boundary detection with a context-window transformer."""

__version__ = "0.1.0"
