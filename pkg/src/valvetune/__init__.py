"""Bayesian-optimization auto-tuning of ADRC throttle-valve controllers."""

__version__ = "0.1.0"
