"""Minimal differentiable network stack."""
from .layers import (
    PARTITIONS,
    ArchitectureSpec,
    GradientTarget,
    Gradients,
    LayerSpec,
    ModelParams,
    backward,
    forward,
    softmax,
    value_and_grad,
)
from .losses import cross_entropy, idd_loss
from .optim import SGD, lr_schedule, sgd_step
from .gradcheck import check_gradients

__all__ = [
    "PARTITIONS", "ArchitectureSpec", "GradientTarget", "Gradients", "LayerSpec", "ModelParams",
    "backward", "forward", "softmax", "value_and_grad", "cross_entropy", "idd_loss", "SGD", "lr_schedule",
    "sgd_step", "check_gradients",
]
