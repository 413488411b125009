"""Edge-enhancing inner-outer reconstruction for linear inverse problems."""

__version__ = "0.1.0"
