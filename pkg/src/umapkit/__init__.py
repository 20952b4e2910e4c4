"""Exact-kNN UMAP with a reproducible optimizer mode."""

from .knn import KnnGraph, build_index, query
from .model import UMAP, UmapModel, UmapParams, fit, load_model, save_model, transform
from .optimizer import OptimizerConfig

__version__ = "0.1.0"
