"""Dense layers, backprop, and Adam: the numeric substrate for every network here.

Everything is double precision. Layers cache their own forward state, so a
network is just an explicit list of layers chained by hand; there is no tape.
Gradients accumulate (+=) into ``Parameter.grad`` until an optimizer step
consumes them, which lets several samples contribute to one update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt as math_sqrt
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import NumericError, ShapeError, StateError

ACTIVATIONS = ("relu", "sigmoid", "identity")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    """Numerically stable logistic function, elementwise.

    Clamped to the nearest representable values inside (0, 1) so the output
    stays strictly inside the open interval for any finite input.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _SIG_LO, _SIG_HI)


def apply_activation(name: str, pre):
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "sigmoid":
        return sigmoid(pre)
    if name == "identity":
        return np.array(pre, copy=True)
    raise ShapeError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def activation_grad(name: str, pre, post):
    """d(post)/d(pre), elementwise, given both sides of the forward pass."""
    if name == "relu":
        return (pre > 0).astype(np.float64)
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "identity":
        return np.ones_like(pre)
    raise ShapeError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass
class Parameter:
    """A trainable tensor with its gradient and Adam state.

    ``grad``, ``adam_m`` and ``adam_v`` always share ``value``'s shape;
    the moment buffers start at zero.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = field(init=False, default=0)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


class LayerActivation(NamedTuple):
    """Pre- and post-activation values of one dense layer evaluation."""

    pre: np.ndarray
    post: np.ndarray


def dense_forward(weights: Parameter, bias: Parameter, x, activation: str) -> LayerActivation:
    """Affine map plus elementwise activation.

    ``x`` may be a single vector ``(in,)``, a batch ``(B, in)``, or a sparse
    CSR batch; the result matches (sparse input produces a dense batch).
    """
    w = weights.value
    b = bias.value
    if sp.issparse(x):
        if x.shape[1] != w.shape[1]:
            raise ShapeError(
                f"input of shape {x.shape} incompatible with weights of shape {w.shape}"
            )
        if _kernels.HAVE_NUMBA:
            csr = x.tocsr()
            pre = np.empty((x.shape[0], w.shape[0]))
            _kernels.sparse_affine_forward(
                csr.indptr, csr.indices, csr.data.astype(np.float64, copy=False),
                np.ascontiguousarray(w.T), b, pre,
            )
        else:
            pre = x @ w.T + b
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != w.shape[1]:
            raise ShapeError(
                f"input of shape {x.shape} incompatible with weights of shape {w.shape}"
            )
        pre = x @ w.T + b
    return LayerActivation(pre=pre, post=apply_activation(activation, pre))


class DenseLayer:
    """One fully connected layer with cached state for the backward pass."""

    def __init__(self, weights: Parameter, bias: Parameter, activation: str):
        if activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        if weights.value.ndim != 2 or bias.value.shape != (weights.value.shape[0],):
            raise ShapeError(
                f"weights {weights.value.shape} and bias {bias.value.shape} are inconsistent"
            )
        self.weights = weights
        self.bias = bias
        self.activation = activation
        self._input = None
        self._record: LayerActivation | None = None

    @property
    def in_dim(self) -> int:
        return self.weights.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.value.shape[0]

    def forward(self, x, record: bool = True) -> LayerActivation:
        act = dense_forward(self.weights, self.bias, x, self.activation)
        if record:
            self._input = x
            self._record = act
        return act

    def backward(self, upstream: np.ndarray) -> np.ndarray | None:
        """Accumulate weight/bias gradients; return the gradient for the input.

        Returns ``None`` when the recorded input was sparse (the layer below
        is the raw rating vector, which has no parameters).
        """
        if self._record is None:
            raise StateError("backward called with no recorded forward pass")
        x, act = self._input, self._record
        self._input = None
        self._record = None

        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != act.pre.shape:
            raise ShapeError(
                f"upstream gradient of shape {upstream.shape} does not match "
                f"output of shape {act.pre.shape}"
            )
        gpre = upstream * activation_grad(self.activation, act.pre, act.post)

        if sp.issparse(x):
            if _kernels.HAVE_NUMBA:
                csr = x.tocsr()
                gwt = np.zeros((self.in_dim, self.out_dim))
                _kernels.sparse_weight_grad(
                    csr.indptr, csr.indices, csr.data.astype(np.float64, copy=False),
                    np.ascontiguousarray(gpre), gwt,
                )
                self.weights.grad += gwt.T
            else:
                # (in, B) @ (B, out) -> (in, out); transpose into the (out, in) layout.
                self.weights.grad += (x.T @ gpre).T
            self.bias.grad += gpre.sum(axis=0)
            return None
        if gpre.ndim == 1:
            self.weights.grad += np.outer(gpre, x)
            self.bias.grad += gpre
            return self.weights.value.T @ gpre
        self.weights.grad += gpre.T @ x
        self.bias.grad += gpre.sum(axis=0)
        return gpre @ self.weights.value

    def parameters(self):
        return [self.weights, self.bias]


def make_dense_layer(
    rng: np.random.Generator, in_dim: int, out_dim: int, activation: str, name: str, std: float = 0.01
) -> DenseLayer:
    """Layer with N(0, std^2) weights and zero bias, drawn from ``rng``."""
    w = Parameter(f"{name}.weights", rng.normal(0.0, std, size=(out_dim, in_dim)))
    b = Parameter(f"{name}.bias", np.zeros(out_dim))
    return DenseLayer(w, b, activation)


def stack_forward(layers: Sequence[DenseLayer], x, record: bool = True):
    """Run a stack of layers in order; returns the final post-activation."""
    h = x
    for layer in layers:
        h = layer.forward(h, record=record).post
    return h


def stack_backward(layers: Sequence[DenseLayer], upstream: np.ndarray):
    """Backpropagate through a stack; returns the gradient for the stack input."""
    g = upstream
    for layer in reversed(layers):
        g = layer.backward(g)
        if g is None:
            break
    return g


def adam_step(
    param: Parameter,
    learning_rate: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    epsilon: float = ADAM_EPSILON,
):
    """Bias-corrected Adam update; consumes and zeroes the gradient.

    Uses the folded form of the bias correction,
    value -= lr * sqrt(1-b2^t)/(1-b1^t) * m / (sqrt(v) + eps*sqrt(1-b2^t)),
    which is algebraically identical to correcting m and v separately but
    needs fewer passes over the buffers.
    """
    t = param.step_count + 1
    bias2 = math_sqrt(1.0 - beta2**t)
    step = learning_rate * bias2 / (1.0 - beta1**t)
    eps_t = epsilon * bias2
    if _kernels.HAVE_NUMBA:
        ok = _kernels.adam_update(
            param.value.reshape(-1), param.grad.reshape(-1),
            param.adam_m.reshape(-1), param.adam_v.reshape(-1),
            beta1, beta2, step, eps_t,
        )
        if not ok:
            raise NumericError(f"non-finite gradient in parameter {param.name!r}")
        param.step_count = t
        return
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient in parameter {param.name!r}")
    param.step_count = t
    np.multiply(param.adam_m, beta1, out=param.adam_m)
    param.adam_m += (1.0 - beta1) * g
    np.multiply(param.adam_v, beta2, out=param.adam_v)
    np.multiply(g, g, out=g)  # grad is consumed; reuse it as the g^2 scratch
    param.adam_v += (1.0 - beta2) * g
    denom = np.sqrt(param.adam_v)
    denom += eps_t
    np.divide(param.adam_m, denom, out=denom)
    denom *= step
    param.value -= denom
    param.zero_grad()
