"""Deterministic, auditable curation pipeline for multimodal instruction corpora."""

__version__ = "0.1.0"
