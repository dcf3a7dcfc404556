"""regflow - asymptotical regularization with convex penalties."""

__version__ = "0.1.0"
