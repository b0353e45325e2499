"""Multi-modal sub-trajectory retrieval and importance-weighted data curation."""

from .errors import (
    ConfigurationError,
    DatasetIOError,
    EmptyAugmentedError,
    FormatError,
    IncompatibleDatasetsError,
    NoDataError,
    TrajcurateError,
    ValidationError,
)
from .retrieval import MatchResult, RetrievedSet, cost_matrix, dtw, retrieve_language, retrieve_topk, sdtw
from .sampler import build_augmented, export_manifest, sample_stream
from .segmenter import Segment, SegmenterConfig, segment, velocity_profile
from .trajstore import Dataset, Trajectory, average_views, load_dataset, validate_pairing, write_dataset
from .weighting import KnnGaussianScorer, ModalityWeights, ReferenceScorer, softmax_weights

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DatasetIOError",
    "EmptyAugmentedError",
    "FormatError",
    "IncompatibleDatasetsError",
    "NoDataError",
    "TrajcurateError",
    "ValidationError",
    "MatchResult",
    "RetrievedSet",
    "cost_matrix",
    "dtw",
    "retrieve_language",
    "retrieve_topk",
    "sdtw",
    "build_augmented",
    "export_manifest",
    "sample_stream",
    "Segment",
    "SegmenterConfig",
    "segment",
    "velocity_profile",
    "Dataset",
    "Trajectory",
    "average_views",
    "load_dataset",
    "validate_pairing",
    "write_dataset",
    "KnnGaussianScorer",
    "ModalityWeights",
    "ReferenceScorer",
    "softmax_weights",
]
