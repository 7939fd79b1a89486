"""Knowledge graph embeddings with concepts as spheres and instances as vectors."""

from .estimator import TransC
from .evaluation import EvalReport, ThresholdClassifier, ThresholdTable
from .geometry import ConceptSphere, EmbeddingSpace, SpherePosition
from .kg import KnowledgeGraph, Triple, TripleKind, load_kg, save_kg
from .training import TrainConfig

__all__ = [
    "ConceptSphere",
    "EmbeddingSpace",
    "EvalReport",
    "KnowledgeGraph",
    "SpherePosition",
    "ThresholdClassifier",
    "ThresholdTable",
    "TrainConfig",
    "TransC",
    "Triple",
    "TripleKind",
    "load_kg",
    "save_kg",
]

__version__ = "0.1.0"
