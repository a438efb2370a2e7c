"""Weighted categorical cross-entropy and inverse-frequency class weights."""

import numpy as np

from .errors import DataError, ShapeError

NUM_CLASSES = 3


class ClassWeights:
    """One positive weight per class.

    Inverse-frequency weights are normalized as N / (K * n_c) so that the
    count-weighted mean weight is 1 and the loss scale stays comparable to
    the unweighted case.
    """

    def __init__(self, weights, mode):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (NUM_CLASSES,) or not np.all(weights > 0):
            raise DataError(f"class weights must be {NUM_CLASSES} positive values")
        self.weights = weights
        self.mode = mode

    @classmethod
    def uniform(cls):
        return cls(np.ones(NUM_CLASSES), "uniform")

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts)
        if counts.shape != (NUM_CLASSES,):
            raise DataError(f"expected {NUM_CLASSES} class counts, got shape {counts.shape}")
        if np.any(counts <= 0):
            empty = [c for c, n in enumerate(counts) if n <= 0]
            raise DataError(f"empty class(es) {empty}: cannot compute inverse frequencies")
        total = counts.sum()
        return cls(total / (NUM_CLASSES * counts.astype(np.float64)), "inverse-frequency")


def weighted_ce_loss(probs, labels, class_weights):
    """Mean weighted cross-entropy over a batch of softmax rows.

    Returns (loss, grad_logits); the gradient is taken w.r.t. the
    pre-softmax logits (fused softmax+CE), which is both cheaper and
    numerically stable.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[1] != NUM_CLASSES:
        raise ShapeError(f"probs shape {probs.shape}, expected (batch, {NUM_CLASSES})")
    if labels.shape != (probs.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} vs batch {probs.shape[0]}")
    if np.any(labels < 0) or np.any(labels >= NUM_CLASSES):
        bad = labels[(labels < 0) | (labels >= NUM_CLASSES)]
        raise DataError(f"invalid label(s) {sorted(set(bad.tolist()))}, expected 0..{NUM_CLASSES - 1}")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-6:
        raise ShapeError("probs rows do not sum to 1; pass softmax output")
    batch = probs.shape[0]
    w = class_weights.weights[labels]
    picked = probs[np.arange(batch), labels]
    loss = float(np.mean(-w * np.log(np.maximum(picked, 1e-300))))
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(batch), labels] = 1.0
    grad_logits = (w[:, None] * (probs - one_hot)) / batch
    return loss, grad_logits
