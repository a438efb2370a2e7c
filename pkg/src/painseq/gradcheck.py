"""Finite-difference gradient verification.

Central differences with h = 1e-5 against analytic gradients, reporting the
max relative error per parameter block. Meant for the 64-bit path only.
"""

import numpy as np


def central_difference(loss_fn, array, h=1e-5):
    """Numerical gradient of scalar-valued loss_fn w.r.t. ``array``.

    ``loss_fn`` takes no arguments and must read ``array`` afresh on each
    call; entries are perturbed in place and restored.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        plus = loss_fn()
        flat[idx] = orig - h
        minus = loss_fn()
        flat[idx] = orig
        gflat[idx] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Max elementwise |a - n| / max(|a|, |n|, 1) over a block.

    The unit floor keeps the measure meaningful when both gradients are
    near zero.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(loss_and_grads, params, h=1e-5):
    """Compare analytic gradients against central differences.

    ``loss_and_grads()`` returns (loss, grads) where grads maps the same
    keys as ``params`` (name -> ndarray, perturbed in place). Returns a
    dict name -> max relative error.
    """
    _, analytic = loss_and_grads()
    report = {}
    for name, array in params.items():
        numeric = central_difference(lambda: loss_and_grads()[0], array, h)
        report[name] = relative_error(analytic[name], numeric)
    return report
