"""Bandit-driven layer-wise importance sampling for GNN training."""

__version__ = "0.1.0"
