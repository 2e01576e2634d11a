"""Continual-learning probabilistic slow feature analysis for multimode process monitoring."""

__version__ = "0.1.0"
