"""Dense tensor numerics with reverse-mode automatic differentiation.

Values are numpy arrays (float32 for training, float64 for verification).
Each Tensor is a node in an acyclic compute graph; ``backward`` on a scalar
root fills ``grad`` on every reachable node that requires gradients.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / benchmarks)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


def _as_array(data, dtype):
    a = np.asarray(data, dtype=dtype if dtype is not None else None)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


class Tensor:
    """A dense real array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def _from_op(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self):
        return Tensor(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        data = self.data + other.data
        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        return Tensor._from_op(data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        data = self.data - other.data
        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(-_unbroadcast(g, b.data.shape))
        return Tensor._from_op(data, (self, other), backward)

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        data = self.data * other.data
        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        return Tensor._from_op(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        data = self.data / other.data
        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        return Tensor._from_op(data, (self, other), backward)

    def __neg__(self):
        def backward(g, a=self):
            a._accumulate(-g)
        return Tensor._from_op(-self.data, (self,), backward)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape)
        def backward(g, a=self):
            a._accumulate(g.reshape(old))
        return Tensor._from_op(data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        data = np.ascontiguousarray(self.data.transpose(axes))
        def backward(g, a=self, inv=tuple(inv)):
            a._accumulate(g.transpose(inv))
        return Tensor._from_op(data, (self,), backward)

    def index_select(self, rows):
        """Select rows along the first axis; gradient scatter-adds back."""
        rows = np.asarray(rows, dtype=np.intp)
        data = self.data[rows]
        def backward(g, a=self, rows=rows):
            acc = np.zeros_like(a.data)
            np.add.at(acc, rows, g)
            a._accumulate(acc)
        return Tensor._from_op(data, (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape
        def backward(g, a=self):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, shape))
        return Tensor._from_op(np.asarray(data), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- matrix products ------------------------------------------------------

    def matmul(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
        if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
        data = a @ b
        def backward(g, x=self, y=other):
            if x.requires_grad:
                x._accumulate(g @ y.data.swapaxes(-1, -2))
            if y.requires_grad:
                y._accumulate(x.data.swapaxes(-1, -2) @ g)
        return Tensor._from_op(data, (self, other), backward)

    __matmul__ = matmul

    # -- graph traversal ------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar root; accumulates into leaf grads."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        on_path = set()
        while stack:
            node, processed = stack.pop()
            if processed:
                on_path.discard(id(node))
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            on_path.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) in on_path:
                    raise ValueError("cycle detected in compute graph")
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self):
        return float(self.data.reshape(-1)[0])


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy trailing-axis broadcast)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- nonlinearities ----------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)
    def backward(g, a=x):
        a._accumulate(g * (a.data > 0))
    return Tensor._from_op(data, (x,), backward)


def leaky_relu(x: Tensor, slope=0.2) -> Tensor:
    data = np.where(x.data > 0, x.data, slope * x.data)
    def backward(g, a=x):
        a._accumulate(g * np.where(a.data > 0, 1.0, slope).astype(a.dtype))
    return Tensor._from_op(data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    # exact erf form: x * Phi(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = (x.data * phi).astype(x.dtype)
    def backward(g, a=x, phi=phi):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        a._accumulate(g * (phi + a.data * pdf))
    return Tensor._from_op(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-x.data))
    def backward(g, a=x, s=data):
        a._accumulate(g * s * (1.0 - s))
    return Tensor._from_op(data, (x,), backward)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)
    def backward(g, a=x):
        a._accumulate(g / a.data)
    return Tensor._from_op(data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)
    def backward(g, a=x, e=data):
        a._accumulate(g * e)
    return Tensor._from_op(data, (x,), backward)


def clip(x: Tensor, lo, hi) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only inside the range."""
    data = np.clip(x.data, lo, hi)
    def backward(g, a=x):
        mask = (a.data >= lo) & (a.data <= hi)
        a._accumulate(g * mask)
    return Tensor._from_op(data, (x,), backward)


def softmax(x: Tensor, axis=-1) -> Tensor:
    if not np.isfinite(x.data).all():
        raise ValueError("softmax received non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)
    def backward(g, a=x, y=data):
        gy = g * y
        a._accumulate(gy - y * gy.sum(axis=axis, keepdims=True))
    return Tensor._from_op(data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data
    n = x.data.shape[-1]
    def backward(g, a=x, w=gain, b=bias, xhat=xhat, inv=inv):
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))
        if w.requires_grad:
            w._accumulate(_unbroadcast(g * xhat, w.data.shape))
        if a.requires_grad:
            gh = g * w.data
            a._accumulate(inv * (gh - gh.mean(axis=-1, keepdims=True)
                                 - xhat * (gh * xhat).mean(axis=-1, keepdims=True)))
    return Tensor._from_op(data, (x, gain, bias), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def backward(g, ts=tensors, offsets=offsets):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])
    return Tensor._from_op(data, tuple(tensors), backward)


# -- 2-D convolution (im2col + matmul) ---------------------------------------

def _im2col(xp, kh, kw, stride):
    # xp: padded (N, C, Hp, Wp) -> (N, Ho, Wo, C*kh*kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N,C,Ho',Wo',kh,kw
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def conv2d(x: Tensor, w: Tensor, b: Tensor = None, stride=1, padding=0) -> Tensor:
    """x: (N,C,H,W), w: (O,C,kh,kw), b: (O,) -> (N,O,Ho,Wo)."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(o, -1)
    out = cols.reshape(-1, c * kh * kw) @ wmat.T
    if b is not None:
        out = out + b.data
    data = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    data = np.ascontiguousarray(data)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, x=x, w=w, b=b, cols=cols, xpshape=xp.shape):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)  # (N*Ho*Wo, O)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if w.requires_grad:
            gw = g2.T @ cols.reshape(-1, c * kh * kw)
            w._accumulate(gw.reshape(w.data.shape))
        if x.requires_grad:
            gcols = (g2 @ w.data.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros(xpshape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(gxp)

    return Tensor._from_op(data, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor = None, stride=1) -> Tensor:
    """x: (N,C,H,W), w: (C,O,kh,kw) -> (N,O,(H-1)*s+kh,(W-1)*s+kw). No padding."""
    n, c, h, wd = x.shape
    ci, o, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    ho = (h - 1) * stride + kh
    wo = (wd - 1) * stride + kw
    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, c)
    contrib = (x2 @ w.data.reshape(c, -1)).reshape(n, h, wd, o, kh, kw)
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += \
                contrib[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if b is not None:
        out += b.data.reshape(1, o, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, x=x, w=w, b=b):
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        # gather windows of g aligned with each input position
        win = sliding_window_view(g, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # win: (N, O, H, W, kh, kw) -> (N*H*W, O*kh*kw)
        win2 = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(-1, o * kh * kw)
        wmat = w.data.reshape(c, o * kh * kw)
        if x.requires_grad:
            gx = (win2 @ wmat.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
            x._accumulate(np.ascontiguousarray(gx))
        if w.requires_grad:
            x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
            w._accumulate((x2.T @ win2).reshape(w.data.shape))

    return Tensor._from_op(out, parents, backward)


# -- gradient verification ---------------------------------------------------

def grad_check(f, x, eps=1e-5, coords=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor. Runs in the dtype of ``x`` (use
    float64). ``coords`` limits the check to that many randomly sampled
    coordinates for expensive functions; default checks every coordinate.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-6, 1e-3]")
    base = np.array(x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    if coords is None:
        idxs = range(flat.size)
    else:
        rng = rng or np.random.default_rng(0)
        idxs = rng.choice(flat.size, size=min(coords, flat.size), replace=False)

    worst = 0.0
    for i in idxs:
        pert = flat.copy()
        pert[i] += eps
        up = f(Tensor(pert.reshape(base.shape))).item()
        pert[i] -= 2 * eps
        dn = f(Tensor(pert.reshape(base.shape))).item()
        if not (math.isfinite(up) and math.isfinite(dn)):
            raise ValueError(f"f non-finite at perturbed coordinate {i}")
        numeric = (up - dn) / (2 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
        worst = max(worst, err)
    return worst
