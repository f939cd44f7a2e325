"""Four natively implemented anomaly detectors plus the evaluation harness.

Supervised: random forest, k-nearest-neighbor. Semi-supervised (fit on
attack-free traffic only, threshold at a high quantile of training scores):
local outlier factor, isolation forest.
"""

from .evaluation import EvalCell, evaluate, f1_score
from .forest import RandomForestDetector
from .iforest import IsolationForestDetector
from .neighbors import KnnDetector, LofDetector
from .models import (
    ALGORITHMS,
    PurityError,
    TrafficModel,
    load_model,
    save_model,
    train_model,
)

__all__ = [
    "ALGORITHMS",
    "EvalCell",
    "IsolationForestDetector",
    "KnnDetector",
    "LofDetector",
    "PurityError",
    "RandomForestDetector",
    "TrafficModel",
    "evaluate",
    "f1_score",
    "load_model",
    "save_model",
    "train_model",
]
