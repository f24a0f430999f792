"""Counterfactual normalization: stable feature sets for prediction under dataset shift."""

__version__ = "0.1.0"
