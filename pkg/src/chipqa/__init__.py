"""Space-time chip features for no-reference video quality prediction."""

__version__ = "0.1.0"
