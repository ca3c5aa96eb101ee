"""Block Kaczmarz solvers with RCM preprocessing and orthogonal block pairing."""

__version__ = "0.1.0"
