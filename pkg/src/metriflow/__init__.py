"""Structure-preserving flow-matched surrogates for dissipative mechanics."""

__version__ = "0.1.0"
