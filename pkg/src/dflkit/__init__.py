"""Decision-focused learning through a learned convex-in-prediction surrogate loss."""

__version__ = "0.1.0"
