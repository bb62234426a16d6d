"""Gradient-based evasion and poisoning attacks on small classifiers,
with transferability metrics and an experiment harness."""

__version__ = "0.1.0"
