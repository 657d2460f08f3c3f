"""SGD with momentum and weight decay, and the annealed learning-rate schedule."""
import logging
from typing import Dict, Iterable, Tuple

import numpy as np

from ..utils import DimensionError, InputError, NumericalError
from .layers import PARTITIONS, Gradients, ModelParams

logger = logging.getLogger(__name__)


def lr_schedule(eta0: float, p: float) -> float:
    """eta = eta0 * (1 + 10 p) ** -0.75 for training progress p in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise InputError(f"progress must lie in [0, 1], got {p}")
    if eta0 <= 0:
        raise InputError(f"initial learning rate must be positive, got {eta0}")
    return eta0 * (1.0 + 10.0 * p) ** -0.75


class SGD:
    """Momentum SGD with L2 weight decay.

    v <- momentum * v + (g + weight_decay * theta)
    theta <- theta - rate * v

    One velocity buffer is kept per parameter array. Partitions not passed to
    ``step`` are carried over untouched.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 5e-4):
        if not 0.0 <= momentum < 1.0:
            raise InputError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise InputError(f"weight decay must be >= 0, got {weight_decay}")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: Dict[Tuple[str, int], np.ndarray] = {}

    def step(self, params: ModelParams, grads: Gradients, rate: float,
             partitions: Iterable[str] = PARTITIONS) -> ModelParams:
        partitions = tuple(partitions)
        if not np.isfinite(rate) or rate < 0:
            raise InputError(f"learning rate must be finite and >= 0, got {rate}")
        if not grads.all_finite(partitions):
            raise NumericalError("non-finite gradient; step aborted")

        staged = {}
        updated = {}
        for name in partitions:
            new_arrays = []
            for i, (theta, g) in enumerate(zip(params.partition(name), grads.partition(name))):
                if theta.shape != g.shape:
                    raise DimensionError(f"{name} gradient {i} has shape {g.shape}, parameter has {theta.shape}")
                direction = g + self.weight_decay * theta if self.weight_decay else g
                if self.momentum:
                    velocity = self._velocity.get((name, i))
                    direction = direction if velocity is None else self.momentum * velocity + direction
                    staged[(name, i)] = direction
                new_arrays.append(theta - rate * direction)
            updated[name] = new_arrays
        self._velocity.update(staged)
        return params.replace(**updated)


def sgd_step(params: ModelParams, grads: Gradients, rate: float, momentum: float = 0.0,
             weight_decay: float = 0.0, partitions: Iterable[str] = PARTITIONS) -> ModelParams:
    """Single stateless SGD step (fresh velocity buffer)."""
    return SGD(momentum=momentum, weight_decay=weight_decay).step(params, grads, rate, partitions)
