"""Semi-interactive player tracking for team sports.

Pipeline: per-frame detections with appearance embeddings are first cut
into short single-identity tracklets, a transformer classifier is trained
on a handful of human-annotated tracklets, and an association step maps
every tracklet to a player identity, either greedily or by restricted
nonnegative factorization. Tracking quality is scored against ground truth
with the standard multi-object metrics.
"""

from .association import (
    Association,
    associate_iterative,
    associate_rnmf,
    build_similarity_matrix,
    rnmf_factorize,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ProjectConfig
from .core import (
    Annotation,
    BoundingBox,
    Detection,
    EmbeddingMatrix,
    Tracklet,
    effective_annotations,
    gather_tracklet_features,
    iou,
    resample_indices,
)
from .metrics import MetricsReport, compute_metrics
from .model import ForwardOutput, TrackletClassifier, select_queries
from .project import Project, ProjectError
from .simulate import SimConfig, simulate
from .tracklets import generate_tracklets
from .training import (
    build_training_set,
    classify_tracklets,
    gradient_check,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "Association",
    "BoundingBox",
    "Detection",
    "EmbeddingMatrix",
    "ForwardOutput",
    "MetricsReport",
    "Project",
    "ProjectConfig",
    "ProjectError",
    "SimConfig",
    "Tracklet",
    "TrackletClassifier",
    "associate_iterative",
    "associate_rnmf",
    "build_similarity_matrix",
    "build_training_set",
    "classify_tracklets",
    "compute_metrics",
    "effective_annotations",
    "gather_tracklet_features",
    "generate_tracklets",
    "gradient_check",
    "iou",
    "load_checkpoint",
    "resample_indices",
    "rnmf_factorize",
    "save_checkpoint",
    "select_queries",
    "simulate",
    "train",
]
