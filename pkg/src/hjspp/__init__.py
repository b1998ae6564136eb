"""Sequential path planning with robust trajectory tracking, via HJ reachability."""

__version__ = "0.1.0"
