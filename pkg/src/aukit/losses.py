"""Training losses: weighted multi-label cross-entropy plus attention penalty."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError

#: Probability clamp inside log terms; prevents -inf on saturated sigmoids.
PROB_EPS = 1e-7

#: Occurrence-rate floor for labels that never occur (weight formula
#: is undefined at rate 0).
RATE_EPS = 1e-3


def class_weights(occurrence_rates: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights, normalized to sum to 1.

    w_j = (1/o_j) / sum_k (1/o_k), with rates floored at RATE_EPS.
    """
    rates = np.asarray(occurrence_rates, dtype=np.float64)
    if rates.ndim != 1:
        raise ShapeError(f"occurrence rates must be 1-D, got shape {rates.shape}")
    if np.any(rates < 0.0) or np.any(rates > 1.0):
        raise DomainError("occurrence rates must lie in [0, 1]")
    inverse = 1.0 / np.maximum(rates, RATE_EPS)
    return inverse / inverse.sum()


def au_detection_loss(p_hat: T.Tensor, labels: np.ndarray, weights: np.ndarray) -> T.Tensor:
    """Weighted binary cross-entropy, averaged over frames (and batch).

    Accepts per-sequence predictions (t, m) or a batch (b, t, m); the
    label axis m is last, and ``weights`` holds one weight per label.
    """
    shape = p_hat.shape
    if len(shape) not in (2, 3):
        raise ShapeError(f"predictions must be (t, m) or (b, t, m), got {shape}")
    truth = np.asarray(labels, dtype=np.float64)
    if truth.shape != shape:
        raise ShapeError(f"labels shape {truth.shape} != predictions shape {shape}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (shape[-1],):
        raise ShapeError(f"weights shape {w.shape} != ({shape[-1]},)")

    clamped = T.clamp(p_hat, PROB_EPS, 1.0 - PROB_EPS)
    log_p = T.log(clamped)
    log_q = T.log(T.scalar_add(T.scalar_mul(clamped, -1.0), 1.0))
    w_full = np.broadcast_to(w, shape)
    pos = T.mul(log_p, T.Tensor(truth * w_full))
    neg = T.mul(log_q, T.Tensor((1.0 - truth) * w_full))
    total = T.sum_all(T.add(pos, neg))
    frames = p_hat.size // shape[-1]
    return T.scalar_mul(total, -1.0 / frames)


def attention_regularizer(attention_map: T.Tensor) -> T.Tensor:
    """Mean response of one attention map (L1/count for positive entries)."""
    return T.mean_all(attention_map)


def attention_stage_loss(
    p_hat: T.Tensor,
    attention: T.Tensor,
    labels: np.ndarray,
    weights: np.ndarray,
    lambda_r: float,
) -> T.Tensor:
    """Detection loss plus lambda_r times the mean attention response.

    ``attention`` stacks the per-frame per-label maps; since every map
    has the same size, the average of per-map means equals the grand
    mean over all entries.
    """
    if lambda_r < 0.0:
        raise DomainError(f"regularizer weight must be >= 0, got {lambda_r}")
    detection = au_detection_loss(p_hat, labels, weights)
    if lambda_r == 0.0:
        return detection
    return T.add(detection, T.scalar_mul(T.mean_all(attention), lambda_r))
