"""Deterministic federated-learning simulator with gradient alignment."""

from . import alignment, data, engine, errors, metrics, nn

__version__ = "0.1.0"

__all__ = ["alignment", "data", "engine", "errors", "metrics", "nn", "__version__"]
