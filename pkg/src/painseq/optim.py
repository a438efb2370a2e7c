"""Adadelta optimizer."""

import numpy as np

from .errors import ShapeError, TrainingError


class AdadeltaState:
    """Per-parameter accumulators for one tensor.

    Update rule:
        E_g2  <- rho * E_g2 + (1 - rho) * g^2
        dx    = -lr * sqrt(E_dx2 + eps) / sqrt(E_g2 + eps) * g
        E_dx2 <- rho * E_dx2 + (1 - rho) * dx^2
        param <- param + dx
    """

    def __init__(self, shape, rho=0.95, epsilon=1e-6, lr=1.0, dtype=np.float64):
        self.e_g2 = np.zeros(shape, dtype=dtype)
        self.e_dx2 = np.zeros(shape, dtype=dtype)
        self.rho = rho
        self.epsilon = epsilon
        self.lr = lr


def adadelta_step(param, grad, state, name="param"):
    """One in-place Adadelta update; returns the updated parameter."""
    grad = np.asarray(grad)
    if grad.shape != param.shape or state.e_g2.shape != param.shape:
        raise ShapeError(
            f"adadelta: param {param.shape}, grad {grad.shape}, "
            f"state {state.e_g2.shape} disagree"
        )
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for {name!r}; training aborted")
    rho = state.rho
    state.e_g2 = rho * state.e_g2 + (1.0 - rho) * grad * grad
    dx = -state.lr * np.sqrt(state.e_dx2 + state.epsilon) / np.sqrt(state.e_g2 + state.epsilon) * grad
    state.e_dx2 = rho * state.e_dx2 + (1.0 - rho) * dx * dx
    param += dx
    return param
