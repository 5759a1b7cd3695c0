"""Counterfactual contribution analysis for discrete-action MDPs."""

__version__ = "0.1.0"
