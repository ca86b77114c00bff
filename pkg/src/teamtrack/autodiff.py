"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the tracklet classifier: a ``Tensor`` wraps an
ndarray, ops build a graph of vector-Jacobian closures, and ``backward``
walks it in reverse topological order. Every op here has a hand-written
VJP that is validated end to end against central finite differences by the
gradient-check suite.

Tensors carry float32 or float64 data (anything else is promoted to
float64); the engine is single-threaded and deterministic.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or node._vjp is None:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over broadcast axes so it matches ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise / broadcast ops --------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):  # tensor * scalar
        a = _wrap(a)
        s = float(b)
        return _node(a.data * s, (a,), lambda g: (g * s,))
    a = _wrap(a)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g * 0.5 / out,))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-safe."""
    out = np.logaddexp(0.0, x.data)
    sig = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))
    return _node(out, (x,), lambda g: (g * sig,))


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Broadcast a new leading axis of size n (used to tile the learned
    queries over a batch)."""
    data = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return _node(data, (x,), lambda g: (g.sum(axis=0),))


def take(x: Tensor, index: tuple) -> Tensor:
    """Fancy-index with integer arrays; gradient scatters back with add.at."""

    def vjp(g):
        gi = np.zeros_like(x.data)
        np.add.at(gi, index, g)
        return (gi,)

    return _node(x.data[index], (x,), vjp)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.shape).copy(),)

    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis]
    return mul(sum_(x, axis, keepdims), 1.0 / n)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b in one node.

    Leading axes of x are flattened for the matrix products so each pass is
    a single large multiply instead of a batch of small ones.
    """
    n_in, n_out = w.shape
    x2 = x.data.reshape(-1, n_in)

    def vjp(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    out = (x2 @ w.data + b.data).reshape(x.shape[:-1] + (n_out,))
    return _node(out, (x, w, b), vjp)


# -- normalization and softmax -------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and
    shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gh = g * gamma.data
        gx = inv * (
            gh - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), vjp)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Train-mode batch norm over axis 0 of a 2-D input.

    Returns (output, batch_mean, batch_var) where the statistics are plain
    arrays (biased variance) for the caller's running-average update.
    """
    n = x.data.shape[0]
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def vjp(g):
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gh = g * gamma.data
        gx = inv / n * (n * gh - gh.sum(axis=0) - xhat * (gh * xhat).sum(axis=0))
        return gx, ggamma, gbeta

    out = _node(xhat * gamma.data + beta.data, (x, gamma, beta), vjp)
    return out, mu, var


def batch_norm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor,
    running_mean: np.ndarray, running_var: np.ndarray, eps: float = 1e-5,
) -> Tensor:
    inv = 1.0 / np.sqrt(running_var + eps)

    def vjp(g):
        xhat = (x.data - running_mean) * inv
        return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = (x.data - running_mean) * inv * gamma.data + beta.data
    return _node(out, (x, gamma, beta), vjp)


# -- losses ---------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; ``logits`` is (n, classes), ``targets``
    integer class indices of shape (n,)."""
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=-1))
    nll = logsumexp - z[np.arange(n), targets]

    def vjp(g):
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        return (g * p / n,)

    return _node(nll.mean(), (logits,), vjp)
