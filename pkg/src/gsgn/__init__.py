"""Self-guided multi-scale image enhancement with task-adaptive style
conditioning: tensor engine, models, losses, metrics, data, training,
CLI, and inference service."""

from .autodiff import Tensor, backward, grad_of, no_grad
from .gradcheck import finite_difference_check
from .models import (
    Critic,
    GSGN,
    MappingNetwork,
    ModelConfig,
    StyleClassifier,
    build_generator,
    count_parameters,
    default_config,
    desk_config,
    sgn2_config,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .losses import LossWeights
from .training import RunLog, TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad_of", "no_grad", "finite_difference_check",
    "Critic", "GSGN", "MappingNetwork", "ModelConfig", "StyleClassifier",
    "build_generator", "count_parameters", "default_config", "desk_config",
    "sgn2_config", "Checkpoint", "load_checkpoint", "save_checkpoint",
    "LossWeights", "RunLog", "TrainConfig", "run_training", "__version__",
]
