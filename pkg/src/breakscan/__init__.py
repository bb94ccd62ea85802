"""Sup-Wald structural break tests for predictive regressions with persistent regressors."""

__version__ = "0.1.0"
