"""Optional numba kernels for the sparse first-layer products.

scipy's CSR matmul handles these correctly but spends most of a training
epoch in its generic loop; these kernels walk the same nonzeros with the
weight matrix held transposed and contiguous. They are a pure speedup: the
layer falls back to scipy when numba is unavailable, and the two paths must
agree (tested to 1e-12).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def sparse_affine_forward(indptr, indices, data, weights_t, bias, out):
    """out[r] = bias + sum over nonzeros (col, v) of row r: v * weights_t[col]."""
    n_rows = out.shape[0]
    n_out = out.shape[1]
    for r in range(n_rows):
        for c in range(n_out):
            out[r, c] = bias[c]
        for k in range(indptr[r], indptr[r + 1]):
            col = indices[k]
            v = data[k]
            for c in range(n_out):
                out[r, c] += v * weights_t[col, c]


@njit(cache=True)
def sparse_weight_grad(indptr, indices, data, grad_pre, grad_weights_t):
    """grad_weights_t[col] += v * grad_pre[r] for every nonzero (r, col, v)."""
    n_rows = grad_pre.shape[0]
    n_out = grad_pre.shape[1]
    for r in range(n_rows):
        for k in range(indptr[r], indptr[r + 1]):
            col = indices[k]
            v = data[k]
            for c in range(n_out):
                grad_weights_t[col, c] += v * grad_pre[r, c]


@njit(cache=True)
def adam_update(value, grad, m, v, beta1, beta2, step, eps_t):
    """Fused Adam pass over flat buffers; zeroes the gradient.

    Returns False (no update applied) if any gradient entry is non-finite.
    """
    for i in range(grad.size):
        if not np.isfinite(grad[i]):
            return False
    for i in range(value.size):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        value[i] -= step * m[i] / (np.sqrt(v[i]) + eps_t)
        grad[i] = 0.0
    return True
