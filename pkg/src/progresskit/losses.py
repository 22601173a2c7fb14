"""Regression losses over progress sequences, with analytic gradients.

The boundary-observant loss multiplies the absolute error by a weight that
grows quadratically with the distance of both the target and the prediction
from 0.5, so mistakes near the start or end of an action cost far more than
the same mistake midway through.  A plain mean-squared loss is kept as the
baseline.  Both are means over the sequence, so tubes of different lengths
contribute comparably when batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossValue:
    """A scalar loss and its gradient with respect to each prediction."""

    value: float
    gradient: np.ndarray


def _check_pair(predictions, targets, require_unit_range: bool):
    p_hat = np.asarray(predictions, dtype=float).ravel()
    p = np.asarray(targets, dtype=float).ravel()
    if len(p_hat) != len(p):
        raise ValueError(f"length mismatch: {len(p_hat)} predictions vs {len(p)} targets")
    if len(p) == 0:
        raise ValueError("empty sequences")
    if require_unit_range:
        for name, arr in (("predictions", p_hat), ("targets", p)):
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} outside [0, 1]")
    return p_hat, p


def bo_loss(predictions, targets) -> LossValue:
    """Boundary-observant loss: mean of [(p-0.5)^2 + (p_hat-0.5)^2] * |p - p_hat|.

    The gradient at the non-differentiable point p_hat = p uses subgradient 0,
    which preserves stationarity at the minimum.
    """
    p_hat, p = _check_pair(predictions, targets, require_unit_range=True)
    n = len(p)
    diff = p_hat - p
    weight = (p - 0.5) ** 2 + (p_hat - 0.5) ** 2
    value = float(np.mean(weight * np.abs(diff)))
    grad = (2.0 * (p_hat - 0.5) * np.abs(diff) + weight * np.sign(diff)) / n
    return LossValue(value, grad)


def l2_loss(predictions, targets) -> LossValue:
    """Mean squared error over the sequence."""
    p_hat, p = _check_pair(predictions, targets, require_unit_range=False)
    n = len(p)
    diff = p_hat - p
    return LossValue(float(np.mean(diff**2)), 2.0 * diff / n)


LOSSES = {"bo": bo_loss, "l2": l2_loss}
