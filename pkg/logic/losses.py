from dataclasses import dataclass

import numpy as np

from exceptions import InvalidArgumentError, ShapeError

CLIP_EPSILON = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean binary cross-entropy over all elements.

    Predictions are clipped to [1e-7, 1 - 1e-7] before the log. The returned
    gradient with respect to the predictions is (p - y) / (p (1 - p)) / N,
    evaluated at the clipped p.

    Returns:
        A tuple (loss, grad_pred).
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction shape {pred.shape} does not match target shape {target.shape}.")
    count = pred.size
    p = np.clip(pred, CLIP_EPSILON, 1.0 - CLIP_EPSILON)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    grad = (p - target) / (p * (1.0 - p)) / count
    return float(loss), grad


@dataclass
class LossResult:
    """Weighted two-head loss and the per-head gradients fed back into the model."""
    total: float
    strong_loss: float
    weak_loss: float
    grad_strong: np.ndarray
    grad_weak: np.ndarray


def combined_loss(strong_pred: np.ndarray, strong_target: np.ndarray,
                  weak_pred: np.ndarray, weak_target: np.ndarray,
                  strong_weight: float, weak_weight: float) -> LossResult:
    """
    w_s * BCE(strong) + w_w * BCE(weak), both mean-reduced.

    Each head's gradient is scaled by its own weight, so a zero weight sends
    an all-zero gradient into that head.
    """
    if strong_weight < 0 or weak_weight < 0:
        raise InvalidArgumentError(
            f"Loss weights must be nonnegative, got {strong_weight} and {weak_weight}.")
    strong_loss, grad_strong = bce_loss(strong_pred, strong_target)
    weak_loss, grad_weak = bce_loss(weak_pred, weak_target)
    return LossResult(
        total=strong_weight * strong_loss + weak_weight * weak_loss,
        strong_loss=strong_loss,
        weak_loss=weak_loss,
        grad_strong=strong_weight * grad_strong,
        grad_weak=weak_weight * grad_weak,
    )
