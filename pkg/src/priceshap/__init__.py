"""Explainable day-ahead electricity price modelling with gradient-boosted
trees, exact tree Shapley values and a merit-order benchmark."""

__version__ = "0.1.0"
