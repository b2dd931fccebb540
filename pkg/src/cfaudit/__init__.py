"""Auditing counterfactual explanations for cherry-picking."""

__version__ = "0.1.0"
