"""Restricted stochastic localization on log-concave measures curved on a subspace."""

__version__ = "0.1.0"
