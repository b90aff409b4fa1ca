"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Every operation executes eagerly on numpy values and records itself on an
implicit tape (the ``Tensor`` graph). ``gradient`` walks the tape once in
reverse topological order. There is no operator fusion beyond a handful of
hand-fused kernels (conv2d, stroke blob deposit) whose composite form would
dominate runtime; correctness is favored over throughput throughout.

Conventions:
  - all values are float64 ndarrays (scalars are 0-d arrays),
  - elementwise ops broadcast with numpy's leading-dimension rules and the
    backward pass sums gradients back down to each operand's shape,
  - a tape is single-threaded; distinct graphs may live on distinct threads.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray

__all__ = [
    "Tensor",
    "as_tensor",
    "constant",
    "evaluate",
    "gradient",
    "add",
    "sub",
    "mul",
    "div",
    "power",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "softplus",
    "maximum",
    "minimum",
    "matmul",
    "conv2d",
    "max_pool2d",
    "mean_pool2d",
    "concat",
    "reshape",
    "transpose",
    "softmax",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "segment_sum",
    "logsumexp",
    "blob_deposit",
    "check_finite",
]


def _asarray(value) -> Array:
    out = np.asarray(value, dtype=np.float64)
    return out


class Tensor:
    """A node of the tape: cached output plus links to its parents.

    ``op`` is the op-kind tag, ``parents`` the input nodes, ``value`` the
    cached forward output, and ``grad`` the gradient accumulator (allocated
    lazily by ``gradient``). Leaves have no parents.
    """

    __slots__ = ("value", "op", "parents", "_backward", "grad")

    def __init__(
        self,
        value,
        op: str = "leaf",
        parents: Sequence["Tensor"] = (),
        backward: Callable[[Array], tuple] | None = None,
    ):
        self.value = _asarray(value)
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward
        self.grad: Array | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        """A constant copy cut off from the tape."""
        return Tensor(self.value)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return _slice(self, idx)


def as_tensor(value) -> Tensor:
    """Wrap ``value`` as a leaf tensor; pass existing tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value, op="const")


def evaluate(root: Tensor) -> Array:
    """Return the cached output of ``root``.

    Ops execute eagerly, so the forward value (and every intermediate the
    backward pass needs) was cached when the graph was built.
    """
    return root.value


def gradient(root: Tensor, wrt: Iterable[Tensor]) -> list[Array]:
    """Reverse-mode gradients of a scalar ``root`` w.r.t. each node in ``wrt``.

    Accumulators of every node reachable from ``root`` are zeroed on entry,
    so repeated calls do not leak state between passes.
    """
    if root.size != 1:
        raise ContractError(f"gradient root must be scalar, got shape {root.shape}")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    # First contribution is borrowed (backward outputs are never mutated);
    # the second allocates a sum we own and may update in place after that.
    owned: set[int] = set()
    for node in reversed(order):
        if node.grad is None or node._backward is None:
            continue
        for parent, pgrad in zip(node.parents, node._backward(node.grad)):
            if pgrad is None or parent.op == "const":
                continue
            if parent.grad is None:
                parent.grad = pgrad
            elif id(parent) in owned:
                parent.grad += pgrad
            else:
                parent.grad = parent.grad + pgrad
                owned.add(id(parent))
    out = []
    for leaf in wrt:
        if leaf.grad is None:
            out.append(np.zeros_like(leaf.value))
        elif leaf.grad.shape != leaf.shape:
            out.append(np.asarray(leaf.grad).reshape(leaf.shape))
        else:
            out.append(leaf.grad)
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative DFS postorder; graphs can be deep (recurrent unrolls)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.value)):
        raise ContractError(f"{what} contains non-finite values")
    return t


# ---------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return Tensor(
        a.value + b.value,
        op="add",
        parents=(a, b),
        backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return Tensor(
        a.value - b.value,
        op="sub",
        parents=(a, b),
        backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return Tensor(
        a.value * b.value,
        op="mul",
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    inv = 1.0 / b.value
    out = a.value * inv
    return Tensor(
        out,
        op="div",
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * inv, a.shape),
            _unbroadcast(-g * out * inv, b.shape),
        ),
    )


def power(a, b) -> Tensor:
    """Elementwise ``a ** b``.

    A raw-number exponent is treated as a constant (no gradient, so the
    base may be nonpositive); a Tensor exponent needs a positive base for
    its gradient to exist.
    """
    a = as_tensor(a)
    exp_const = not isinstance(b, Tensor)
    b = constant(b) if exp_const else b
    _check_broadcast(a, b, "power")
    out = a.value**b.value

    def backward(g):
        ga = _unbroadcast(g * b.value * a.value ** (b.value - 1.0), a.shape)
        if exp_const or b.op == "const":
            return ga, None
        safe = np.where(a.value > 0, a.value, 1.0)
        return ga, _unbroadcast(g * out * np.log(safe), b.shape)

    return Tensor(out, op="power", parents=(a, b), backward=backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor(out, op="exp", parents=(a,), backward=lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(
        np.log(a.value), op="log", parents=(a,), backward=lambda g: (g / a.value,)
    )


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return Tensor(out, op="tanh", parents=(a,), backward=lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return Tensor(
        out, op="sigmoid", parents=(a,), backward=lambda g: (g * out * (1.0 - out),)
    )


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed stably for large |a|."""
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.value)
    sig = _sigmoid(a.value)
    return Tensor(out, op="softplus", parents=(a,), backward=lambda g: (g * sig,))


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "maximum")
    take_a = a.value >= b.value
    return Tensor(
        np.maximum(a.value, b.value),
        op="maximum",
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
    )


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the gradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "minimum")
    take_a = a.value <= b.value
    return Tensor(
        np.minimum(a.value, b.value),
        op="minimum",
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
    )


# ---------------------------------------------------------------------------
# shape manipulation


def _slice(a: Tensor, idx) -> Tensor:
    out = a.value[idx]

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(out, op="slice", parents=(a,), backward=backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(
        a.value.reshape(shape),
        op="reshape",
        parents=(a,),
        backward=lambda g: (g.reshape(a.shape),),
    )


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return Tensor(
        np.transpose(a.value, axes),
        op="transpose",
        parents=(a,),
        backward=lambda g: (np.transpose(g, inv),),
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(
        np.concatenate([t.value for t in tensors], axis=axis),
        op="concat",
        parents=tensors,
        backward=backward,
    )


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(
        a.value.sum(axis=axis, keepdims=keepdims), op="sum", parents=(a,), backward=backward
    )


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor(
        a.value.mean(axis=axis, keepdims=keepdims),
        op="mean",
        parents=(a,),
        backward=backward,
    )


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction (single int axis or None); ties route gradient to the
    first-encountered maximum."""
    a = as_tensor(a)
    out = a.value.max(axis=axis, keepdims=keepdims)

    def backward(g):
        first = np.zeros(a.shape, dtype=bool)
        if axis is None:
            first[np.unravel_index(np.argmax(a.value), a.shape)] = True
        else:
            idx = np.argmax(a.value, axis=axis)
            np.put_along_axis(first, np.expand_dims(idx, axis), True, axis=axis)
            if not keepdims:
                g = np.expand_dims(g, axis)
        return (np.where(first, np.broadcast_to(g, a.shape), 0.0),)

    return Tensor(out, op="max", parents=(a,), backward=backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, op="softmax", parents=(a,), backward=backward)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp composed from primitive ops (shift is detached)."""
    a = as_tensor(a)
    shift = constant(a.value.max(axis=axis, keepdims=True))
    inner = log(reduce_sum(exp(sub(a, shift)), axis=axis, keepdims=True))
    out = add(inner, shift)
    if not keepdims:
        out = reshape(out, np.squeeze(out.value, axis=axis).shape)
    return out


def segment_sum(a, segment_ids: Array, num_segments: int) -> Tensor:
    """Sum rows of ``a`` (first axis) into ``num_segments`` buckets."""
    a = as_tensor(a)
    ids = np.asarray(segment_ids)
    out = np.zeros((num_segments,) + a.shape[1:], dtype=np.float64)
    np.add.at(out, ids, a.value)
    return Tensor(
        out, op="segment_sum", parents=(a,), backward=lambda g: (g[ids],)
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """numpy ``matmul`` semantics: 2-D, 1-D promotions, broadcast batches."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul requires operands of rank >= 1")
    if a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[-1]):
        raise ShapeError(f"matmul: inner dims of {a.shape} and {b.shape} differ")
    out = np.matmul(a.value, b.value)

    def backward(g):
        # promote 1-D operands so every case is (..., m, k) @ (..., k, n)
        av = a.value[None, :] if a.ndim == 1 else a.value
        bv = b.value[:, None] if b.ndim == 1 else b.value
        gm = g
        if a.ndim == 1:
            gm = np.expand_dims(gm, -2)
        if b.ndim == 1:
            gm = np.expand_dims(gm, -1)
        ga = gb = None
        if a.op != "const":
            ga = np.matmul(gm, np.swapaxes(bv, -1, -2))
            if a.ndim == 1:
                ga = ga.reshape(-1, a.shape[0]).sum(axis=0)
            else:
                ga = _unbroadcast(ga, a.shape)
        if b.op != "const":
            gb = np.matmul(np.swapaxes(av, -1, -2), gm)
            if b.ndim == 1:
                gb = gb.reshape(-1, b.shape[0], 1)[..., 0].sum(axis=0) if gb.ndim > 2 else gb[:, 0]
            else:
                gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return Tensor(out, op="matmul", parents=(a, b), backward=backward)


# ---------------------------------------------------------------------------
# convolution and pooling (im2col lowering; correctness over throughput)


def _im2col(x: Array, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (n, c, oh, ow, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols: Array, xshape, kh, kw, stride, pad, oh, ow) -> Array:
    n, c, h, w = xshape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[
                :, :, :, :, i, j
            ]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution of ``x`` (N,C,H,W) with kernels ``w`` (F,C,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: {x.shape} vs {w.shape}")
    n, c, _, _ = x.shape
    f, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x.value, kh, kw, stride, pad)
    wmat = w.value.reshape(f, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.value.reshape(1, f, 1, 1)
        parents.append(b)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        gw = None if w.op == "const" else (gmat.T @ cols).reshape(w.shape)
        gx = None
        if x.op != "const":
            gx = _col2im(gmat @ wmat, x.shape, kh, kw, stride, pad, oh, ow)
        if b is not None:
            gb = None if b.op == "const" else g.sum(axis=(0, 2, 3))
            return gx, gw, gb
        return gx, gw

    return Tensor(out, op="conv2d", parents=parents, backward=backward)


def _pool_windows(x: Array, k: int, stride: int):
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride].reshape(n, c, oh, ow, k * k)
    return win, oh, ow


def max_pool2d(x, k: int = 2, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or k
    win, oh, ow = _pool_windows(x.value, k, stride)
    am = win.argmax(axis=-1)
    out = np.take_along_axis(win, am[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.value)
        ii, jj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
        rows = ii * stride + am // k  # (n, c, oh, ow) after broadcast
        cols = jj * stride + am % k
        n, c = x.shape[:2]
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        # overlapping windows can select the same source pixel twice
        np.add.at(gx, (ni, ci, rows, cols), g)
        return (gx,)

    return Tensor(out, op="max_pool2d", parents=(x,), backward=backward)


def mean_pool2d(x, k: int = 2, stride: int | None = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or k
    win, oh, ow = _pool_windows(x.value, k, stride)
    out = win.mean(axis=-1)

    def backward(g):
        gx = np.zeros_like(x.value)
        share = g / (k * k)
        for di in range(k):
            for dj in range(k):
                gx[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride] += share
        return (gx,)

    return Tensor(out, op="mean_pool2d", parents=(x,), backward=backward)


# ---------------------------------------------------------------------------
# fused rasterization kernel


def blob_deposit(points, sigma, height: int, width: int) -> Tensor:
    """Accumulate isotropic Gaussian blobs (peak 1) at ``points`` on a grid.

    ``points`` is (S, 2) in (x, y) pixel coordinates; the result is (H, W)
    with entry [r, c] = sum_s exp(-((c-x_s)^2 + (r-y_s)^2) / (2 sigma^2)).
    The kernel is separable, so forward and backward are two small matmuls
    instead of an (S, H, W) broadcast.
    """
    points, sigma = as_tensor(points), as_tensor(sigma)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"blob_deposit expects (S, 2) points, got {points.shape}")
    px = points.value[:, 0][:, None]  # (S, 1)
    py = points.value[:, 1][:, None]
    gx = np.arange(width, dtype=np.float64)[None, :]
    gy = np.arange(height, dtype=np.float64)[None, :]
    s2 = float(sigma.value) ** 2
    dx = gx - px  # (S, W)
    dy = gy - py  # (S, H)
    ex = np.exp(-(dx * dx) / (2.0 * s2))
    ey = np.exp(-(dy * dy) / (2.0 * s2))
    out = ey.T @ ex  # (H, W)

    def backward(g):
        gey = g @ ex.T  # (H, S)
        gex = ey @ g  # (S, W)
        # d out / d px = ex * dx / s2 rowwise; likewise for py
        gpx = (gex * ex * dx / s2).sum(axis=1)
        gpy = (gey.T * ey * dy / s2).sum(axis=1)
        gsig = (
            (gex * ex * (dx * dx)).sum() + (gey.T * ey * (dy * dy)).sum()
        ) / (s2 * float(sigma.value))
        return np.stack([gpx, gpy], axis=1), np.asarray(gsig).reshape(sigma.shape)

    return Tensor(out, op="blob_deposit", parents=(points, sigma), backward=backward)
