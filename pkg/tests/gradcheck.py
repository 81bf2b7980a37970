"""Central finite-difference gradient oracle.

Independent of the tape: derivatives are estimated by re-running the forward
function at perturbed inputs, never by consulting recorded gradients. Checks
are meaningful only in float64 (use `precision('f64')`).
"""

import numpy as np

from dualpath_cs.autograd import backward, tensor


def numeric_gradients(fn, arrays, h=1e-4):
    """d(fn)/d(arrays[i]) by central differences; fn maps ndarrays -> float."""
    grads = []
    work = [a.copy() for a in arrays]
    for i, arr in enumerate(work):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + h
            up = fn(*work)
            flat[j] = saved - h
            down = fn(*work)
            flat[j] = saved
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_gradients(build, arrays):
    """d(build)/d(arrays[i]) via the tape; build maps Tensors -> scalar Tensor."""
    tensors = [tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def max_gradient_error(build, arrays, h=1e-4):
    """Worst relative mismatch between tape gradients and finite differences.

    `build` maps Tensors to a scalar Tensor and is also evaluated on plain
    arrays (re-wrapped without gradient tracking) for the numeric side.
    """

    def as_float(*plain):
        return build(*[tensor(a) for a in plain]).item()

    analytic = analytic_gradients(build, arrays)
    numeric = numeric_gradients(as_float, arrays, h=h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
