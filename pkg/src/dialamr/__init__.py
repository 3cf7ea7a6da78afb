"""Dialogue-level AMR graphs, relation-aware graph encoders, and task harnesses."""

__version__ = "0.1.0"
