"""Activated random walks on the integers: exact toppling, jump-chain dynamics,
the inductive interval procedure and Monte Carlo estimators."""

__version__ = "0.1.0"
