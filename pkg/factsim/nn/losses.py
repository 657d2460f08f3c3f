"""Cross-entropy and inter-domain distance (IDD) losses."""
import numpy as np

from ..utils import InputError

ROW_SUM_TOLERANCE = 1e-6


def _check_probs(probs: np.ndarray, name: str = "probs") -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InputError(f"{name} must be a non-empty (batch, classes) array, got shape {probs.shape}")
    return probs


def _check_labels(probs: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise InputError(f"expected {probs.shape[0]} labels, got array of shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"labels must be integer class indices, got dtype {labels.dtype}")
    num_classes = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean negative log-probability of the true class."""
    probs = _check_probs(probs)
    labels = _check_labels(probs, labels)
    if np.any(np.abs(np.sum(probs, axis=1) - 1.0) > ROW_SUM_TOLERANCE):
        raise InputError("probability rows must sum to 1")
    picked = probs[np.arange(probs.shape[0]), labels]
    # Clamped so a zero probability gives a large finite loss.
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))


def cross_entropy_logit_grad(probs: np.ndarray, labels) -> np.ndarray:
    """Gradient of the mean softmax cross-entropy w.r.t. the logits."""
    probs = _check_probs(probs)
    labels = _check_labels(probs, labels)
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1.0
    return grad / probs.shape[0]


def idd_loss(probs1: np.ndarray, probs2: np.ndarray) -> float:
    """Batch mean of the per-sample L1 distance between two heads' probabilities."""
    probs1 = _check_probs(probs1, "probs1")
    probs2 = _check_probs(probs2, "probs2")
    if probs1.shape != probs2.shape:
        raise InputError(f"IDD inputs differ in shape: {probs1.shape} vs {probs2.shape}")
    return float(np.mean(np.sum(np.abs(probs1 - probs2), axis=1)))


def idd_prob_grad(probs1: np.ndarray, probs2: np.ndarray) -> np.ndarray:
    """Gradient of idd_loss w.r.t. probs1; sign(0) = 0 keeps equal heads stationary."""
    if probs1.shape != probs2.shape:
        raise InputError(f"IDD inputs differ in shape: {probs1.shape} vs {probs2.shape}")
    return np.sign(probs1 - probs2) / probs1.shape[0]
