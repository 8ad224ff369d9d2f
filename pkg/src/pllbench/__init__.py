"""Partial-label learning benchmark: data, training rules, model-selection criteria and their checks."""

__version__ = "0.1.0"
