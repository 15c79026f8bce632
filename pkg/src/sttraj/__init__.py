"""Pedestrian trajectory forecasting with attention-built spatio-temporal graphs."""
from .autodiff import Tensor, backward, grad_check
from .config import RunConfig, profile_config
from .data import TrajectoryScene, load_dataset, load_scene, window_sequences
from .kernels import BACKEND
from .losses import LossConfig, MetricsReport
from .model import ModelConfig, STGraphModel, load_checkpoint, model_forward, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "LossConfig", "MetricsReport", "ModelConfig", "RunConfig", "STGraphModel", "Tensor",
    "TrajectoryScene", "backward", "grad_check", "load_checkpoint", "load_dataset", "load_scene",
    "model_forward", "profile_config", "save_checkpoint", "window_sequences",
]
