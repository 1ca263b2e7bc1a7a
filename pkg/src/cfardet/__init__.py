"""Learned constant-false-alarm-rate detectors and classical baselines."""

__version__ = "0.1.0"
