"""Transformer map matcher: parameters, layers, training, and inference."""

from ..routes import collapse
from .layers import attention, ffn, layer_norm, multi_head_attention
from .optim import AdamState, adam_step
from .params import (
    COMPONENTS,
    ModelConfig,
    ModelParameters,
    init_parameters,
    load_checkpoint,
    parameter_spec,
    save_checkpoint,
    validate_parameters,
)
from .train import FULL_MASK, LossRecord, encode_dataset, fine_tune, resolve_mask, train
from .transformer import (
    AttentionRecord,
    NormalizedTrajectory,
    attention_ranges,
    backward,
    forward,
    loss_and_gradients,
    normalize,
    predict,
    softmax,
)

__all__ = [
    "AdamState",
    "AttentionRecord",
    "COMPONENTS",
    "FULL_MASK",
    "LossRecord",
    "ModelConfig",
    "ModelParameters",
    "NormalizedTrajectory",
    "adam_step",
    "attention",
    "attention_ranges",
    "backward",
    "collapse",
    "encode_dataset",
    "ffn",
    "fine_tune",
    "forward",
    "init_parameters",
    "layer_norm",
    "load_checkpoint",
    "loss_and_gradients",
    "multi_head_attention",
    "normalize",
    "parameter_spec",
    "predict",
    "resolve_mask",
    "save_checkpoint",
    "softmax",
    "train",
    "validate_parameters",
]
