"""Minimal deterministic tensor engine with reverse-mode differentiation.

Tensors wrap contiguous numpy arrays (float32 for training, float64 for
verification) and record a tape of parent links plus backward closures.
Only the operations the gait network needs are provided; everything is
single-threaded numpy, so results are bit-reproducible for a fixed seed
and input order.

Network activations use the channels-last layout (N, T, V, C): every
weight contraction then works on the last axis and the temporal taps are
contiguous slabs, which keeps the hot loops free of transpose copies.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class GraphError(RuntimeError):
    """Backward invoked without a recorded forward pass."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad, fresh=False):
        # `fresh` marks arrays the caller just allocated and will not reuse,
        # so the first accumulation may take ownership instead of copying.
        if self.grad is None:
            self.grad = grad if fresh else grad.copy()
        else:
            self.grad += grad

    def backward(self):
        """Reverse-mode sweep from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise GraphError("backward requires a scalar loss")
        if not self._parents:
            raise GraphError("backward without a recorded forward pass")
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _node(data, parents, backward):
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires, tuple(parents), backward if requires else None)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            r = _unbroadcast(g, a.shape)
            a._accumulate(r, fresh=r is not g)
        if b.requires_grad:
            r = _unbroadcast(g, b.shape)
            b._accumulate(r, fresh=r is not g)

    return _node(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), fresh=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), fresh=True)

    return _node(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape), fresh=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape), fresh=True)

    return _node(a.data / b.data, (a, b), backward)


def power(a, exponent: float):
    a = as_tensor(a)
    out = a.data**exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1), fresh=True)

    return _node(out, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out, fresh=True)

    return _node(out, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.data, fresh=True)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a):
    """Square root with the zero-at-zero subgradient.

    The derivative blows up at 0 (e.g. coincident embeddings inside a
    distance matrix); choosing subgradient 0 there keeps training finite
    without changing the forward value.
    """
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        a._accumulate(np.where(out > 0, g * 0.5 / safe, 0.0), fresh=True)

    return _node(out, (a,), backward)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0)

    def backward(g):
        a._accumulate(g * (a.data > 0), fresh=True)

    return _node(out, (a,), backward)


def clip(a, lo: float, hi: float):
    """Clamp values; gradient is passed through only inside the interval."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        a._accumulate(g * ((a.data > lo) & (a.data < hi)), fresh=True)

    return _node(out, (a,), backward)


def where(mask: np.ndarray, a, b):
    """Select by a constant boolean mask; gradients are routed accordingly."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.shape), fresh=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.shape), fresh=True)

    return _node(np.where(mask, a.data, b.data), (a, b), backward)


# -- shape -------------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        r = np.ascontiguousarray(g.transpose(inverse))
        a._accumulate(r, fresh=r is not g)

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def concat(tensors, axis: int):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


def take(a, indices, axis: int):
    """Gather along an axis; backward scatter-adds into the source."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.data)
        expand = [slice(None)] * a.data.ndim
        for pos, idx in enumerate(indices):
            expand[axis] = idx
            out[tuple(expand)] += np.take(g, pos, axis=axis)
        a._accumulate(out, fresh=True)

    return _node(np.take(a.data, indices, axis=axis), (a,), backward)


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy(), fresh=True)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def _extremum(a, axis, keepdims, op):
    a = as_tensor(a)
    out = op(a.data, axis=axis, keepdims=keepdims)
    expanded = out if keepdims else np.expand_dims(out, axis)
    hit = a.data == expanded
    # route the gradient to the first extremum only, so ties stay deterministic
    mask = hit & (np.cumsum(hit, axis=axis) == 1)

    def backward(g):
        g_exp = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.where(mask, g_exp, 0.0), fresh=True)

    return _node(out, (a,), backward)


def tmax(a, axis, keepdims=False):
    return _extremum(a, axis, keepdims, np.max)


def tmin(a, axis, keepdims=False):
    return _extremum(a, axis, keepdims, np.min)


def logsumexp(a, axis, keepdims=False):
    """Numerically stable log-sum-exp built from engine primitives."""
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    summed = tsum(exp(add(a, Tensor(-shift))), axis=axis, keepdims=keepdims)
    shift_out = shift if keepdims else np.squeeze(shift, axis=axis)
    return add(log(summed), Tensor(shift_out))


# -- linear algebra ----------------------------------------------------------


def matmul(a, w):
    """a (..., k) @ w (k, m); contraction over the last axis of `a`."""
    a, w = as_tensor(a), as_tensor(w)
    k = a.shape[-1]
    a2 = a.data.reshape(-1, k)
    out = (a2 @ w.data).reshape(a.shape[:-1] + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        if a.requires_grad:
            a._accumulate((g2 @ w.data.T).reshape(a.shape), fresh=True)
        if w.requires_grad:
            w._accumulate(a2.T @ g2, fresh=True)

    return _node(out, (a, w), backward)


# -- network-specific ops ----------------------------------------------------


def spatial_graph_conv(x, a_norm: np.ndarray, weight):
    """Partitioned graph convolution: sum_k (x aggregated by A_k) W_k.

    x: (N, T, V, C); a_norm: constant (K, V, V) normalized stack with
    A[i, j] = weight of neighbor j in partition k of node i; weight:
    (K, C, C_out). Linear in both x and the weights.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    kparts, v, _ = a_norm.shape
    n, t, vx, c = x.shape
    if v != vx:
        raise ValueError(f"adjacency size {v} does not match V={vx}")
    if weight.shape[0] != kparts or weight.shape[1] != c:
        raise ValueError(f"weight shape {weight.shape} does not match (K={kparts}, C={c})")
    c_out = weight.shape[2]
    a_norm = a_norm.astype(x.dtype, copy=False)
    # the published form right-multiplies the (.., V) feature axis by A;
    # channels-last that is a left batched product with A transposed
    at = np.ascontiguousarray(a_norm.transpose(0, 2, 1))

    xa = np.empty((kparts, n, t, v, c), dtype=x.dtype)
    for k in range(kparts):
        np.matmul(at[k], x.data, out=xa[k])
    out = np.zeros((n, t, v, c_out), dtype=x.dtype)
    flat_out = out.reshape(-1, c_out)
    for k in range(kparts):
        flat_out += xa[k].reshape(-1, c) @ weight.data[k]

    def backward(g):
        g2 = g.reshape(-1, c_out)
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
            for k in range(kparts):
                dw[k] = xa[k].reshape(-1, c).T @ g2
            weight._accumulate(dw, fresh=True)
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for k in range(kparts):
                dxa = (g2 @ weight.data[k].T).reshape(n, t, v, c)
                dx += a_norm[k] @ dxa
            x._accumulate(dx, fresh=True)

    return _node(out, (x, weight), backward)


def temporal_conv(x, weight, stride: int = 1):
    """Temporal convolution over axis T with symmetric zero padding.

    x: (N, T, V, C); weight: (C_out, C, width). Output length is
    ceil(T / stride) for odd widths.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    c_out, c_in, width = weight.shape
    n, t, v, c = x.shape
    if c != c_in:
        raise ValueError(f"input channels {c} do not match kernel {c_in}")
    pad = (width - 1) // 2
    if t + 2 * pad < width:
        raise ValueError("sequence too short for kernel width")
    cols = kernels.temporal_im2col(x.data, width, stride, pad)  # (N, To, V, width*C)
    t_out = cols.shape[1]
    # weight -> (C_out, width*C) matching the tap-major column layout
    w2 = np.ascontiguousarray(weight.data.transpose(0, 2, 1)).reshape(c_out, width * c_in)
    out = (cols.reshape(-1, width * c_in) @ w2.T).reshape(n, t_out, v, c_out)

    def backward(g):
        g2 = g.reshape(-1, c_out)
        if weight.requires_grad:
            dw2 = g2.T @ cols.reshape(-1, width * c_in)
            dw = np.ascontiguousarray(dw2.reshape(c_out, width, c_in).transpose(0, 2, 1))
            weight._accumulate(dw, fresh=True)
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, t_out, v, width * c_in)
            dx = kernels.temporal_col2im(dcols, width, stride, pad, t)
            x._accumulate(dx, fresh=True)

    return _node(out, (x, weight), backward)


def batchnorm(x, gamma, beta, eps: float = 1e-5):
    """Fused training-mode batch normalization over all but the last axis.

    x: (..., C); gamma, beta: (C,). Returns (output, batch_mean, batch_var)
    with the statistics as plain arrays for running-estimate updates.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    m = x.size // c
    x2 = x.data.reshape(-1, c)
    mu = x2.mean(axis=0)
    centered = x.data - mu
    c2 = centered.reshape(-1, c)
    var = np.einsum("mc,mc->c", c2, c2) / m
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * (gamma.data * inv)
    out += beta.data

    def backward(g):
        g2 = g.reshape(-1, c)
        dbeta = g2.sum(axis=0)
        if beta.requires_grad:
            beta._accumulate(dbeta, fresh=True)
        sum_g_xhat = np.einsum("mc,mc->c", g2, c2) * inv
        if gamma.requires_grad:
            gamma._accumulate(sum_g_xhat, fresh=True)
        if x.requires_grad:
            dx = m * g - dbeta
            dx -= centered * (inv * sum_g_xhat)
            dx *= gamma.data * inv / m
            x._accumulate(dx, fresh=True)

    return _node(out, (x, gamma, beta), backward), mu, var


# -- verification ------------------------------------------------------------


def grad_check(fn, inputs: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` maps the input tensors to a scalar Tensor; inputs must be float64
    and are marked as requiring gradients.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.zero_grad()
    loss = fn(*inputs)
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            hi = fn(*inputs).item()
            flat[i] = original - eps
            lo = fn(*inputs).item()
            flat[i] = original
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            denom = max(abs(a) + abs(numeric), 1.0)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
