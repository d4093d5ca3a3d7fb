"""Information-gain based decisiveness-aware token handling for generative recommendation."""

__version__ = "0.1.0"
