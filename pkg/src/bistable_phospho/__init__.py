"""Bistable phosphorylation and nucleocytoplasmic transport: models and analysis."""

__version__ = "0.1.0"
