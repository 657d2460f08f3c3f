"""Central finite-difference check of the analytic gradients."""
import logging
from typing import List, Optional, Sequence

import numpy as np

from .layers import GradientTarget, ModelParams, backward, forward_layers
from .losses import cross_entropy, idd_loss

logger = logging.getLogger(__name__)


def _evaluate(params: ModelParams, x: np.ndarray, target: GradientTarget, labels, second_head):
    """Loss value and a fingerprint of every non-differentiable branch taken."""
    spec = params.spec
    latent, gen_caches = forward_layers(spec.generator, params.generator, x)
    probs, head_caches = forward_layers(spec.head, params.head, latent, where="head")
    branches = [c for layer, c in zip(spec.generator, gen_caches) if layer.kind == "relu"]
    branches += [c for layer, c in zip(spec.head, head_caches) if layer.kind == "relu"]
    if target.loss == "cross_entropy":
        return cross_entropy(probs, labels), branches
    probs2, caches2 = forward_layers(spec.head, second_head, latent, where="second head")
    branches += [c for layer, c in zip(spec.head, caches2) if layer.kind == "relu"]
    branches.append(np.sign(probs - probs2))
    return idd_loss(probs, probs2), branches


def _same_branches(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(params: ModelParams, x: np.ndarray, target: GradientTarget,
                    labels: Optional[np.ndarray] = None,
                    second_head: Optional[Sequence[np.ndarray]] = None,
                    h: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error of a coordinate is |a - n| / max(|a|, |n|, floor).
    Coordinates whose perturbation crosses a ReLU or |.| kink are skipped.
    """
    analytic = backward(params, x, target, labels=labels, second_head=second_head)
    _, base_branches = _evaluate(params, x, target, labels, second_head)
    worst = 0.0
    skipped = 0
    for name in sorted(target.partitions):
        for i, array in enumerate(params.partition(name)):
            for idx in np.ndindex(array.shape):
                values = []
                crossed = False
                for sign in (1.0, -1.0):
                    perturbed = [a.copy() for a in params.partition(name)]
                    perturbed[i][idx] += sign * h
                    trial = params.replace(**{name: perturbed})
                    loss, branches = _evaluate(trial, x, target, labels, second_head)
                    crossed = crossed or not _same_branches(branches, base_branches)
                    values.append(loss)
                if crossed:
                    skipped += 1
                    continue
                numeric = (values[0] - values[1]) / (2.0 * h)
                exact = analytic.partition(name)[i][idx]
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
                worst = max(worst, error)
    if skipped:
        logger.debug(f"Skipped {skipped} coordinates at non-differentiable points")
    return worst
