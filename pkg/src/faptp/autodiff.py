"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records the ops that produced it; calling
``backward()`` on a scalar result walks the tape in reverse topological
order. Only what the model needs is implemented, always in a form whose
gradient can be validated against central finite differences.

Design notes:
  - float64 end to end; callers that want float32 convert at the boundary.
  - broadcasting follows numpy; gradients are summed back over broadcast
    axes (``_unbroadcast``).
  - a module-global ``no_grad`` switch disables taping for evaluation.
"""

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- basic protocol ----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- autograd ----------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
            if t._backward is None:
                continue
            parent_grads = t._backward(g)
            for p, pg in zip(t._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.requires_grad = True  # parameters stay trainable even under no_grad


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    need = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not need:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data**2), b.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def pow_const(a, p):
    a = as_tensor(a)
    out = a.data**p

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return _make(out, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            ga, gb = g * b.data, g * a.data
        elif a.ndim == 1:  # (k,) @ (..., k, m)
            bt = np.swapaxes(b.data, -1, -2)
            ga = np.expand_dims(g, -2) @ bt
            ga = np.squeeze(ga, -2)
            gb = np.expand_dims(a.data, -1) * np.expand_dims(g, -2)
        elif b.ndim == 1:  # (..., n, k) @ (k,)
            ga = np.expand_dims(g, -1) * b.data
            at = np.swapaxes(a.data, -1, -2)
            gb = at @ g
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(np.asarray(ga), a.shape), _unbroadcast(np.asarray(gb), b.shape)

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def abs_(a):
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a, lo, hi):
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _make(out, (a,), lambda g: (g * inside,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out**2),))


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        return (g / (1.0 + np.exp(-a.data)),)

    return _make(out, (a,), backward)


def relu(a):
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def leaky_relu(a, alpha=0.2):
    a = as_tensor(a)
    out = np.where(a.data > 0, a.data, alpha * a.data)
    return _make(out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, alpha),))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    neg = alpha * (np.exp(np.minimum(a.data, 0.0)) - 1.0)
    out = np.where(a.data > 0, a.data, neg)
    return _make(out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, neg + alpha),))


def silu(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s
    return _make(out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a_ % a.ndim for a_ in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)

    def backward(g):
        if axes is None:
            return (np.transpose(g),)
        inv = np.argsort(axes)
        return (np.transpose(g, inv),)

    return _make(out, (a,), backward)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)
    return _make(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), backward)


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), backward)


def gather_rows(a, index):
    """Select rows by an integer array; backward scatter-adds."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out = a.data[index]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _make(out, (a,), backward)


def cumsum(a, axis=-1):
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(out, (a,), backward)


def pad2d(a, pad_h, pad_w):
    """Zero padding of the two trailing spatial axes of an NCHW tensor."""
    a = as_tensor(a)
    spec = [(0, 0)] * (a.ndim - 2) + [(pad_h, pad_h), (pad_w, pad_w)]
    out = np.pad(a.data, spec)

    def backward(g):
        sl = [slice(None)] * (a.ndim - 2)
        sl += [slice(pad_h, g.shape[-2] - pad_h), slice(pad_w, g.shape[-1] - pad_w)]
        return (g[tuple(sl)],)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------------------
# softmax and normalization
# ---------------------------------------------------------------------------


def masked_softmax(scores, mask=None, axis=-1):
    """Softmax along ``axis``; positions where ``mask`` is False get weight 0.

    Rows with no valid position at all produce an all-zero row rather than
    NaN (and propagate no gradient), which is what an empty neighborhood in
    a graph needs.
    """
    scores = as_tensor(scores)
    x = scores.data
    if mask is None:
        valid = np.ones_like(x, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    neg = np.where(valid, x, -np.inf)
    mx = np.max(neg, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(valid, np.exp(neg - mx), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    out = np.where(denom > 0, e / np.where(denom > 0, denom, 1.0), 0.0)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (scores,), backward)


def softmax(scores, axis=-1):
    return masked_softmax(scores, None, axis)


def layer_norm(x, gain, bias, axis=-1, eps=1e-5):
    """(x - mean) / sqrt(var + eps) * gain + bias, composed from primitives.

    A constant row has zero variance and normalizes to exactly zero thanks to
    the epsilon guard.
    """
    mu = mean(x, axis=axis, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=axis, keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * gain + bias


def dropout(x, p, rng, training):
    """Inverted dropout: scaling at train time, identity at eval."""
    if not training or p <= 0.0:
        return x
    x = as_tensor(x)
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, keep)


# ---------------------------------------------------------------------------
# convolution and spatial ops (NCHW)
# ---------------------------------------------------------------------------


def _im2col(x, kh, kw):
    # x: (N, C, H, W) already padded -> (N, C*kh*kw, OH*OW)
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # (N, C, OH, OW, kh, kw) -> (N, C, kh, kw, OH, OW)
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, x_shape, kh, kw):
    n, c, h, w = x_shape
    oh, ow = h - kh + 1, w - kw + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + oh, j : j + ow] += cols[:, :, i, j]
    return dx


def conv2d(x, w, b=None, padding=0):
    """Stride-1 2-D convolution (cross-correlation) on NCHW tensors."""
    x = as_tensor(x)
    w = as_tensor(w)
    if padding:
        x = pad2d(x, padding, padding)
    kh, kw = w.shape[2], w.shape[3]
    cols, oh, ow = _im2col(x.data, kh, kw)
    wmat = w.data.reshape(w.shape[0], -1)
    out = np.einsum("of,nfp->nop", wmat, cols).reshape(x.shape[0], w.shape[0], oh, ow)

    def backward(g):
        gmat = g.reshape(g.shape[0], g.shape[1], -1)  # (N, O, OH*OW)
        gw = np.einsum("nop,nfp->of", gmat, cols).reshape(w.shape)
        gcols = np.einsum("of,nop->nfp", wmat, gmat)
        gx = _col2im(gcols, x.shape, kh, kw)
        return gx, gw

    out_t = _make(out, (x, w), backward)
    if b is not None:
        out_t = out_t + reshape(b, (1, -1, 1, 1))
    return out_t


def avg_pool2d(x, k=2):
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError(f"avg_pool2d needs spatial dims divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        g = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (g,)

    return _make(out, (x,), backward)


def upsample_nearest2(x, k=2):
    x = as_tensor(x)
    out = np.repeat(np.repeat(x.data, k, axis=2), k, axis=3)

    def backward(g):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, k, w, k).sum(axis=(3, 5)),)

    return _make(out, (x,), backward)


def global_mean_pool2d(x):
    return mean(x, axis=(2, 3))
