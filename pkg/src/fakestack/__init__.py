"""Stacked transformer ensemble for COVID-19 fake-news detection on tweets."""

__version__ = "0.1.0"
