from .layers import (
    BatchNorm,
    Conv1dUpsample,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    LeakyRelu,
    MergeFibers,
    SplitFibers,
)
from .network import (
    Network,
    Workspace,
    build_cnn_large,
    build_cnn_small,
    build_multifiber,
    infer_preallocated,
)
from .train import Adam, TrainedNetwork, TrainOptions, gradient_check, mse_loss, train
from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import CnnReconstructor, MultiFiberCnnReconstructor

__all__ = [
    "BatchNorm", "Conv1dUpsample", "Conv2d", "Dense", "Dropout", "Flatten",
    "LeakyRelu", "MergeFibers", "SplitFibers",
    "Network", "Workspace", "build_cnn_large", "build_cnn_small",
    "build_multifiber", "infer_preallocated",
    "Adam", "TrainedNetwork", "TrainOptions", "gradient_check", "mse_loss", "train",
    "load_checkpoint", "save_checkpoint",
    "CnnReconstructor", "MultiFiberCnnReconstructor",
]
