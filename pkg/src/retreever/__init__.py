"""Tree cross attention: answer queries over N tokens by attending to
O(log N) of them, with a REINFORCE-trained retrieval policy, plus cross
attention and Perceiver IO baselines, desk-scale tasks, and benchmarks."""

from .config import RunConfig
from .engine import AllocationCounter, Array, Tape
from .errors import (
    ConfigError,
    EmptyContextError,
    MaskError,
    PoisonedUpdateError,
    RankError,
    RetreeverError,
    ShapeError,
    StateError,
)
from .models import ModelConfig, Prediction, build_model
from .tca import (
    BatchedSelection,
    RetrievalPolicy,
    SelectedSet,
    format_trace,
    retrieve,
    retrieve_batch,
    retrieve_full,
    tca_forward,
)
from .training import LossWeights, RewardSpec, evaluate, total_loss, train_loop
from .tree import Tree, aggregate, build_tree, selected_count, token_fraction

__version__ = "0.1.0"

__all__ = [
    "AllocationCounter",
    "Array",
    "BatchedSelection",
    "ConfigError",
    "EmptyContextError",
    "LossWeights",
    "MaskError",
    "ModelConfig",
    "PoisonedUpdateError",
    "Prediction",
    "RankError",
    "RetreeverError",
    "RetrievalPolicy",
    "RewardSpec",
    "RunConfig",
    "SelectedSet",
    "ShapeError",
    "StateError",
    "Tape",
    "Tree",
    "aggregate",
    "build_model",
    "build_tree",
    "evaluate",
    "format_trace",
    "retrieve",
    "retrieve_batch",
    "retrieve_full",
    "selected_count",
    "tca_forward",
    "token_fraction",
    "total_loss",
    "train_loop",
    "__version__",
]
