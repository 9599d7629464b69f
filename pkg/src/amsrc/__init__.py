"""Appearance-motion consistency video anomaly detection on numpy."""

__version__ = "0.1.0"
