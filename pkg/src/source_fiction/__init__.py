"""Semi-supervised domain adaptation by optimal transport to a source fiction.

The labeled target points are nudged, inside a ball small enough to keep
their pairing cyclically monotone, until the source classifier labels them
correctly. All target points are then transported onto these nudged points
and classified there.
"""

from .attack import AttackConfig, build_source_fiction, epsilon_bound, inverse_fsgd
from .classifier import ClassifierParams, TrainConfig, train
from .dataset import LabeledDataset, ShiftSpec, apply_shift, generate_gaussian_mixture
from .monotonicity import Pairing, check_cycles
from .pipeline import AdaptationConfig, AdaptationReport, ablate_epsilon, adapt, benchmark

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig", "AdaptationReport", "AttackConfig", "ClassifierParams", "LabeledDataset",
    "Pairing", "ShiftSpec", "TrainConfig", "ablate_epsilon", "adapt", "apply_shift", "benchmark",
    "build_source_fiction", "check_cycles", "epsilon_bound", "generate_gaussian_mixture",
    "inverse_fsgd", "train",
]
