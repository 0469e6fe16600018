"""Chest-radiograph preprocessing toolkit: deterministic manifest
building, lung-field masking/cropping/contrast pipelines, shortcut
probes, and fairness-aware evaluation reports."""

__version__ = "0.1.0"
