"""Bayesian model-based agents that plan ahead on a learned model and act one step at a time."""

__version__ = "0.1.0"
