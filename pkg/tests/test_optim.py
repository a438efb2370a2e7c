import numpy as np
import pytest

from painseq.errors import ShapeError, TrainingError
from painseq.optim import AdadeltaState, adadelta_step


def hand_stepped_reference(grads, rho=0.95, eps=1e-6, lr=1.0):
    """Plain-scalar re-derivation of the update rule."""
    e_g2 = e_dx2 = 0.0
    p = 0.0
    trajectory = []
    for g in grads:
        e_g2 = rho * e_g2 + (1 - rho) * g * g
        dx = -lr * np.sqrt(e_dx2 + eps) / np.sqrt(e_g2 + eps) * g
        e_dx2 = rho * e_dx2 + (1 - rho) * dx * dx
        p += dx
        trajectory.append(p)
    return trajectory


def test_zero_gradient_leaves_parameters_unchanged():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(3, 4))
    original = p.copy()
    state = AdadeltaState(p.shape)
    state.e_g2[:] = 0.5
    state.e_dx2[:] = 0.25
    adadelta_step(p, np.zeros_like(p), state)
    assert np.array_equal(p, original)
    assert np.allclose(state.e_g2, 0.95 * 0.5)  # accumulators decay only
    assert np.allclose(state.e_dx2, 0.95 * 0.25)


def test_first_step_from_fresh_state():
    p = np.zeros(1)
    state = AdadeltaState(p.shape, rho=0.95, epsilon=1e-6, lr=1.0)
    adadelta_step(p, np.ones(1), state)
    assert abs(p[0] + 0.004472) < 1e-6
    assert abs(p[0] - (-np.sqrt(1e-6) / np.sqrt(0.05 + 1e-6))) < 1e-15


def test_two_steps_on_scalar_quadratic_match_oracle():
    # f(x) = 0.5 x^2 around x0 = 2, gradient = x
    x = np.array([2.0])
    state = AdadeltaState(x.shape)
    positions = []
    grads = []
    for _ in range(2):
        g = x[0]
        grads.append(g)
        adadelta_step(x, np.array([g]), state)
        positions.append(x[0])
    ref = hand_stepped_reference(grads)
    assert all(abs(positions[i] - (2.0 + ref[i])) < 1e-12 for i in range(2))


def test_five_step_trajectory_matches_reference():
    grads = [1.0, -0.5, 0.25, 2.0, -1.0]
    p = np.zeros(1)
    state = AdadeltaState(p.shape)
    trajectory = []
    for g in grads:
        adadelta_step(p, np.array([g]), state)
        trajectory.append(p[0])
    ref = hand_stepped_reference(grads)
    assert np.max(np.abs(np.array(trajectory) - np.array(ref))) < 1e-12


def test_accumulators_stay_non_negative():
    rng = np.random.default_rng(3)
    p = rng.normal(size=8)
    state = AdadeltaState(p.shape)
    for _ in range(50):
        adadelta_step(p, rng.normal(size=8), state)
    assert np.all(state.e_g2 >= 0) and np.all(state.e_dx2 >= 0)


def test_non_finite_gradient_aborts_with_name():
    p = np.zeros(2)
    state = AdadeltaState(p.shape)
    with pytest.raises(TrainingError, match="lstm1.w_x"):
        adadelta_step(p, np.array([1.0, np.nan]), state, name="lstm1.w_x")


def test_shape_mismatch_rejected():
    p = np.zeros(2)
    with pytest.raises(ShapeError):
        adadelta_step(p, np.zeros(3), AdadeltaState((2,)))
