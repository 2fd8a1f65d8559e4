"""Unsupervised multi-objective feature selection for intrusion detection data."""

from .classify import cross_validate, metrics, t_test
from .dataset import encode, load_csv, load_schema
from .measures import build_cache
from .nsga2 import GaConfig, evolve
from .objectives import ObjectiveVector, evaluate, get_model

__version__ = "0.1.0"

__all__ = [
    "GaConfig", "ObjectiveVector", "build_cache", "cross_validate", "encode", "evaluate",
    "evolve", "get_model", "load_csv", "load_schema", "metrics", "t_test",
]
