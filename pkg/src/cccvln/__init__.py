"""Counterfactual cycle-consistent training of a speaker and a follower on grid worlds."""

__version__ = "0.1.0"
