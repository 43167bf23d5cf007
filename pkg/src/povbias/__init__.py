"""Detect biased phrasing in single statements with GRU/attention classifiers."""

__version__ = "0.1.0"
