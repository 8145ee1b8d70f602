"""Exponential-family Langevin dynamics: optimizers, divergence oracles and generalization-bound tracking."""

__version__ = "0.1.0"
