"""A small reverse-mode autodiff engine over numpy arrays.

Layout is channels-last: an image tensor is ``[H, W, C]`` and a batch of them
``[B, H, W, C]``; every op here accepts either form.  Gradients of leaves are
accumulated additively into ``Tensor.grad``; callers zero them between steps.
Intermediate gradients live only for the duration of a ``backward`` call.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import GraphError, ShapeError

_DTYPE = np.float32
_GRAD_ENABLED = True
_KINKS: list | None = None


def default_dtype() -> type:
    return _DTYPE


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype new tensors are created with.

    >>> with precision(np.float64):
    ...     tensor([1.0]).data.dtype
    dtype('float64')
    """
    prev = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a backward graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the sign pattern at every non-smooth op (relu, abs) evaluated inside.

    Finite-difference checks compare patterns at ``x - eps`` and ``x + eps``:
    when they differ the secant straddles a kink and is not a valid oracle.
    """
    global _KINKS
    prev = _KINKS
    _KINKS = []
    try:
        yield _KINKS
    finally:
        _KINKS = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE and not _parents:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    def abs(self) -> "Tensor":
        return tabs(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t):
    raise GraphError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _make(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    if _GRAD_ENABLED and _needs_grad(*parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), backward)


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def tabs(a: Tensor) -> Tensor:
    ad = a.data
    if _KINKS is not None:
        _KINKS.append(np.packbits(ad > 0))
    return _make(np.abs(ad), (a,), lambda g: (np.sign(ad).astype(g.dtype) * g,))


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _make(np.asarray(out), (a,), backward)


def tmean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stop_gradient(a: Tensor) -> Tensor:
    """Same values as ``a`` with no path back into the graph."""
    return Tensor(a.data)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def relu(a: Tensor) -> Tensor:
    ad = a.data
    if _KINKS is not None:
        _KINKS.append(np.packbits(ad > 0))
    y = np.maximum(ad, 0)
    return _make(y, (a,), lambda g: (g * (y > 0),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return _make(y, (a,), lambda g: (g * y * (1 - y),))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "linear": lambda a: a}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# image ops
# ---------------------------------------------------------------------------

def _check_image(x: Tensor, what: str):
    if x.ndim not in (3, 4):
        raise ShapeError(f"{what}: expected [H,W,C] or [B,H,W,C], got shape {x.shape}")


def _flat_mm(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    lead = a.shape[:-1]
    return (a.reshape(-1, a.shape[-1]) @ w).reshape(*lead, w.shape[-1])


def _im2col(xp: np.ndarray, ks: int, H: int, W: int) -> np.ndarray:
    lead = xp.shape[:-3]
    cin = xp.shape[-1]
    cols = np.empty((*lead, H, W, ks, ks, cin), dtype=xp.dtype)
    for i in range(ks):
        for j in range(ks):
            cols[..., i, j, :] = xp[..., i:i + H, j:j + W, :]
    return cols.reshape(-1, ks * ks * cin)


# Below this many input channels a single im2col matmul beats per-tap matmuls.
_IM2COL_MAX_CIN = 8


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero 'same' padding.

    ``kernels`` is ``[k, k, Cin, Cout]`` with odd ``k``.  Wide inputs are
    convolved as a sum of shifted matrix products, narrow ones through an
    im2col buffer.
    """
    _check_image(x, "conv2d")
    k = kernels.data
    if k.ndim != 4 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ShapeError(f"conv2d: kernels must be [k,k,Cin,Cout] with odd k, got {k.shape}")
    cin, cout = k.shape[2], k.shape[3]
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[-1]} channels, kernels expect {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    xd = x.data
    ks = k.shape[0]
    r = ks // 2
    H, W = xd.shape[-3], xd.shape[-2]
    lead = xd.shape[:-1]
    cols = None
    if ks == 1:
        xp = xd
        out = _flat_mm(xd, k[0, 0])
    else:
        pad = [(0, 0)] * (xd.ndim - 3) + [(r, r), (r, r), (0, 0)]
        xp = np.pad(xd, pad)
        if cin <= _IM2COL_MAX_CIN:
            cols = _im2col(xp, ks, H, W)
            out = (cols @ k.reshape(-1, cout)).reshape(*lead, cout)
        else:
            out = _flat_mm(xp[..., 0:H, 0:W, :], k[0, 0])
            for i in range(ks):
                for j in range(ks):
                    if i or j:
                        out += _flat_mm(xp[..., i:i + H, j:j + W, :], k[i, j])
    if bias is not None:
        out += bias.data

    def backward(g):
        gk = gx = gb = None
        g2 = g.reshape(-1, cout)
        if kernels.requires_grad:
            if ks == 1:
                gk = (xd.reshape(-1, cin).T @ g2).reshape(k.shape)
            elif cols is not None:
                gk = (cols.T @ g2).reshape(k.shape)
            else:
                gk = np.empty_like(k)
                for i in range(ks):
                    for j in range(ks):
                        xs = xp[..., i:i + H, j:j + W, :].reshape(-1, cin)
                        gk[i, j] = xs.T @ g2
        if x.requires_grad:
            if ks == 1:
                gx = _flat_mm(g, k[0, 0].T)
            else:
                gp = np.zeros(xp.shape, dtype=g.dtype)
                if cols is not None:
                    gc = (g2 @ k.reshape(-1, cout).T).reshape(*lead, ks, ks, cin)
                    for i in range(ks):
                        for j in range(ks):
                            gp[..., i:i + H, j:j + W, :] += gc[..., i, j, :]
                else:
                    for i in range(ks):
                        for j in range(ks):
                            gp[..., i:i + H, j:j + W, :] += _flat_mm(g, k[i, j].T)
                gx = gp[..., r:r + H, r:r + W, :]
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernels, bias) if bias is not None else (x, kernels)
    return _make(out, parents, backward)


def pointwise_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-pixel dense map of the channel vector: ``out[p] = x[p] @ weight + bias``."""
    if x.ndim < 1:
        raise ShapeError("pointwise_linear: input must have a channel axis")
    w = weight.data
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"pointwise_linear: input channels {x.shape[-1]} vs weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[1],):
        raise ShapeError(f"pointwise_linear: bias shape {bias.shape} != ({w.shape[1]},)")
    xd = x.data
    out = _flat_mm(xd, w)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = _flat_mm(g, w.T) if x.requires_grad else None
        gw = xd.reshape(-1, w.shape[0]).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, backward)


def gram(features: Tensor) -> Tensor:
    """Channel correlation ``G[a, b] = mean_p f[p, a] * f[p, b]`` per image."""
    _check_image(features, "gram")
    f = features.data
    H, W, C = f.shape[-3:]
    lead = f.shape[:-3]
    flat = f.reshape(*lead, H * W, C)
    n = H * W
    G = np.swapaxes(flat, -1, -2) @ flat / n

    def backward(g):
        gs = g + np.swapaxes(g, -1, -2)
        return ((flat @ gs / n).reshape(f.shape),)

    return _make(G, (features,), backward)


def depth_to_space(x: Tensor, block: int) -> Tensor:
    """``[h, w, C*b*b] -> [h*b, w*b, C]``; input channel ``c*b*b + dy*b + dx``
    lands at sub-pixel ``(dy, dx)`` of output channel ``c``."""
    _check_image(x, "depth_to_space")
    if x.shape[-1] % (block * block):
        raise ShapeError(f"depth_to_space: {x.shape[-1]} channels not divisible by {block}^2")
    y = _d2s(x.data, block)
    return _make(y, (x,), lambda g: (_s2d(g, block),))


def _s2d(d: np.ndarray, block: int) -> np.ndarray:
    H, W, c = d.shape[-3:]
    if H % block or W % block:
        raise ShapeError(f"space_to_depth: {H}x{W} not divisible by {block}")
    lead = d.shape[:-3]
    n = len(lead)
    y = d.reshape(*lead, H // block, block, W // block, block, c)
    perm = tuple(range(n)) + tuple(n + a for a in (0, 2, 4, 1, 3))
    return y.transpose(perm).reshape(*lead, H // block, W // block, c * block * block)


def _d2s(d: np.ndarray, block: int) -> np.ndarray:
    h, w, cc = d.shape[-3:]
    c = cc // (block * block)
    lead = d.shape[:-3]
    n = len(lead)
    y = d.reshape(*lead, h, w, c, block, block)
    perm = tuple(range(n)) + tuple(n + a for a in (0, 3, 1, 4, 2))
    return y.transpose(perm).reshape(*lead, h * block, w * block, c)


def space_to_depth(x: Tensor, block: int) -> Tensor:
    """Exact inverse of :func:`depth_to_space`."""
    _check_image(x, "space_to_depth")
    return _make(_s2d(x.data, block), (x,), lambda g: (_d2s(g, block),))


def mean_abs_diff(a: Tensor, b) -> Tensor:
    return tmean(tabs(a - b))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p is not None and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def reaches(root: Tensor, leaves: Iterable[Tensor]) -> bool:
    """True when any tensor in ``leaves`` is an ancestor of ``root``."""
    ids = {id(t) for t in leaves}
    return any(id(n) in ids for n in _topo_order(root))


def backward(loss: Tensor, scope: Iterable[Tensor] | None = None) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every reachable leaf.

    When ``scope`` is given, only leaves in it receive gradient and nodes that
    cannot reach the scope are skipped.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)  # parents before children
    allowed = None if scope is None else {id(t) for t in scope}

    live: set[int] | None = None
    if allowed is not None:
        live = set()
        for node in order:
            if (node.is_leaf and id(node) in allowed) or any(
                    p is not None and id(p) in live for p in node._parents):
                live.add(id(node))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if allowed is None or id(node) in allowed:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if p is None or pg is None or not p.requires_grad:
                continue
            if live is not None and id(p) not in live:
                continue
            if pg.shape != p.shape:
                raise GraphError(f"gradient shape {pg.shape} does not match tensor {p.shape}")
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
