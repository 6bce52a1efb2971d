"""Minimal reverse-mode differentiable-layer core shared by the three learners."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck_report
from .layers import (
    Conv2D,
    Dense,
    Flatten,
    MaxPool,
    NearestUpsample,
    Relu,
    Reshape,
    RNNCell,
    Tanh,
    rnn_step,
)
from .network import (
    Branch,
    NetworkSpec,
    backward,
    forward,
    infer_output_shape,
    init_params,
    mse_loss,
    param_count,
    spec_from_dict,
    spec_to_dict,
)
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "Branch",
    "Conv2D",
    "Dense",
    "Flatten",
    "MaxPool",
    "NearestUpsample",
    "NetworkSpec",
    "Relu",
    "Reshape",
    "RNNCell",
    "Tanh",
    "adam_step",
    "backward",
    "forward",
    "gradcheck_report",
    "infer_output_shape",
    "init_params",
    "load_checkpoint",
    "mse_loss",
    "param_count",
    "rnn_step",
    "save_checkpoint",
    "spec_from_dict",
    "spec_to_dict",
]
