"""Counterfactual primal-dual training of graph-neural power control policies."""

__version__ = "0.1.0"
