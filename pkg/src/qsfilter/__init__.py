"""Classical versions of quantum stochastic filters."""

__version__ = "0.1.0"
