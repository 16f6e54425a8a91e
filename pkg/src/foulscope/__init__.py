"""Interpretable prototype-based biofouling detection over precomputed embeddings."""

__version__ = "0.1.0"

from .core import (ClassConfidenceMap, ComponentAssignment, EmbeddedFrame, FramePrediction,  # noqa: E402
                   InferenceConfig, PrototypeBank, cluster_components, confidence_map,
                   normalize_embedding, predict_frame, score_components)
from .fitting import (FitConfig, FitReport, LabeledEmbeddingSet, PrototypeClassifier,  # noqa: E402
                      collect_components, exemplars, fit_bank, partition_positive_components)
from .kmeans import SphericalKMeans, spherical_kmeans  # noqa: E402
from .metrics import (average_precision, confusion_at, evaluate, pr_curve,  # noqa: E402
                      select_threshold, slof_from_coverage)
