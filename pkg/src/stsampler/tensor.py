"""Dense float tensors with reverse-mode automatic differentiation.

Design:

* Tensors wrap C-contiguous float32 (default) or float64 numpy arrays.
* Executed primitives append nodes to the innermost active
  ComputationRecord (a tape); append order is execution order, which is
  already topological.  No record open means pure inference: nothing is
  taped and no gradients can be requested.
* Accumulating primitives (matmul, convolution, means, softmax, norms)
  run in float64 internally and round the result back to the tensor dtype.
* Broadcasting is limited to scalar-with-tensor; everything else requires
  explicit reshapes.
* This module owns no randomness; stochastic ops receive noise from the
  caller.

Tensors serialize to the TNSR container: an ASCII header line
"TNSR v1 <ndim> <d1> ... <dn>\\n" followed by little-endian float32 data.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes (or domains) incompatible with the requested op."""


class Tensor:
    """A dense float array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_record")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else DEFAULT_DTYPE
        if arr.ndim == 0:
            self.data = arr.astype(dtype)  # ascontiguousarray would promote to 1-D
        else:
            self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._record = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, cut off from the tape."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self):
        if self._record is None:
            raise ShapeError("backward: tensor was not produced under a record")
        self._record.backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce_max(self, axes, keepdims)

    def min(self, axes=None, keepdims=False):
        return reduce_min(self, axes, keepdims)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, " \
               f"requires_grad={self.requires_grad})"


class Node:
    """One executed primitive: inputs, output and a vector-Jacobian closure."""

    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class ComputationRecord:
    """Ordered tape of executed primitives (inputs always precede users)."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor):
        """Populate .grad of every requires_grad tensor reachable from loss."""
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            grads = node.vjp(out_grad)
            for t, g in zip(node.inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                t.accumulate_grad(g)


_STATE = threading.local()


def _record_stack():
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def current_record():
    stack = _record_stack()
    return stack[-1] if stack else None


@contextmanager
def record():
    """Open a fresh tape; primitives executed inside are appended to it."""
    rec = ComputationRecord()
    stack = _record_stack()
    stack.append(rec)
    try:
        yield rec
    finally:
        stack.pop()


def backward(loss: Tensor):
    """Reverse pass over the record that produced loss."""
    loss.backward()


def _emit(op: str, inputs, out_data: np.ndarray, vjp) -> Tensor:
    out = Tensor(out_data, dtype=out_data.dtype)
    rec = current_record()
    if rec is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = rec
        rec.nodes.append(Node(op, tuple(inputs), out, vjp))
    return out


def _as_tensor_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _check_same_dtype(op, a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _binary_shapes(op, a: Tensor, b: Tensor):
    """Allowed: identical shapes, or one side with a single element."""
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    """Collapse a broadcast gradient back onto a scalar operand."""
    if g.shape == t.data.shape:
        return g
    return np.asarray(g, dtype=np.float64).sum().astype(t.dtype).reshape(t.data.shape)


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor_like(b, a)
    _check_same_dtype("add", a, b)
    _binary_shapes("add", a, b)
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _emit("add", (a, b), out, vjp)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor_like(b, a)
    _check_same_dtype("sub", a, b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _emit("sub", (a, b), out, vjp)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor_like(b, a)
    _check_same_dtype("mul", a, b)
    _binary_shapes("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _emit("mul", (a, b), out, vjp)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor_like(b, a)
    _check_same_dtype("div", a, b)
    _binary_shapes("div", a, b)
    out = a.data / b.data

    def vjp(g):
        ga = _reduce_to(g / b.data, a)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b)
        return ga, gb

    return _emit("div", (a, b), out, vjp)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _emit("relu", (a,), out, vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data.astype(np.float64)
    s64 = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = s64.astype(a.dtype)

    def vjp(g):
        return ((g.astype(np.float64) * s64 * (1.0 - s64)).astype(a.dtype),)

    return _emit("sigmoid", (a,), out, vjp)


def softplus(a: Tensor) -> Tensor:
    x = a.data.astype(np.float64)
    out = np.logaddexp(0.0, x).astype(a.dtype)
    s64 = 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))

    def vjp(g):
        return ((g.astype(np.float64) * s64).astype(a.dtype),)

    return _emit("softplus", (a,), out, vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data.astype(np.float64)).astype(a.dtype)

    def vjp(g):
        return (g * out,)

    return _emit("exp", (a,), out, vjp)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ShapeError("log: input has non-positive entries")
    out = np.log(a.data.astype(np.float64)).astype(a.dtype)

    def vjp(g):
        return (g / a.data,)

    return _emit("log", (a,), out, vjp)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ShapeError("sqrt: input has negative entries")
    out = np.sqrt(a.data.astype(np.float64)).astype(a.dtype)

    def vjp(g):
        return ((g.astype(np.float64) / (2.0 * np.maximum(out, 1e-300))).astype(a.dtype),)

    return _emit("sqrt", (a,), out, vjp)


# -- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape).copy()

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _emit("reshape", (a,), out, vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got shape {tuple(a.shape)}")
    out = np.ascontiguousarray(a.data.T)

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return _emit("transpose", (a,), out, vjp)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2))

    def vjp(g):
        return (np.ascontiguousarray(np.swapaxes(g, ax1, ax2)),)

    return _emit("swapaxes", (a,), out, vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    for t in tensors[1:]:
        _check_same_dtype("concat", tensors[0], t)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
                     for i in range(len(tensors)))

    return _emit("concat", tuple(tensors), out, vjp)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather sub-tensors along axis 0 (indices are constants, not taped)."""
    if axis != 0:
        raise ShapeError("take: only axis 0 is supported")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take: index out of range for leading dim {a.shape[0]}")
    out = a.data[idx].copy()

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _emit("take", (a,), out, vjp)


# -- reductions ---------------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def _keepdims_shape(shape, axes):
    return tuple(1 if ax in axes else d for ax, d in enumerate(shape))


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    out = a.data.astype(np.float64).sum(axis=axes, keepdims=keepdims).astype(a.dtype)
    red_shape = _keepdims_shape(a.data.shape, axes)

    def vjp(g):
        return (np.broadcast_to(g.reshape(red_shape), a.data.shape).astype(a.dtype),)

    return _emit("sum", (a,), np.asarray(out), vjp)


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 1
    out = a.data.astype(np.float64).mean(axis=axes, keepdims=keepdims).astype(a.dtype)
    red_shape = _keepdims_shape(a.data.shape, axes)

    def vjp(g):
        return ((np.broadcast_to(g.reshape(red_shape), a.data.shape) / count).astype(a.dtype),)

    return _emit("mean", (a,), np.asarray(out), vjp)


def _extreme_mask(data: np.ndarray, axes, mode: str) -> np.ndarray:
    """One-hot mask of the first max/min along the reduced axes."""
    ndim = data.ndim
    keep = [ax for ax in range(ndim) if ax not in axes]
    perm = keep + list(axes)
    moved = data.transpose(perm)
    outer = int(np.prod([data.shape[ax] for ax in keep])) if keep else 1
    inner = int(np.prod([data.shape[ax] for ax in axes])) if axes else 1
    flat = moved.reshape(outer, inner)
    pick = np.argmax(flat, axis=1) if mode == "max" else np.argmin(flat, axis=1)
    mask = np.zeros_like(flat)
    mask[np.arange(outer), pick] = 1
    mask = mask.reshape(moved.shape)
    inv = np.argsort(perm)
    return mask.transpose(inv)


def _reduce_extreme(a: Tensor, axes, keepdims: bool, mode: str) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    fn = np.max if mode == "max" else np.min
    out = fn(a.data, axis=axes, keepdims=keepdims)
    mask = _extreme_mask(a.data, axes, mode)
    red_shape = _keepdims_shape(a.data.shape, axes)

    def vjp(g):
        return ((np.broadcast_to(g.reshape(red_shape), a.data.shape) * mask).astype(a.dtype),)

    return _emit(mode, (a,), np.asarray(out), vjp)


def reduce_max(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(a, axes, keepdims, "max")


def reduce_min(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    return _reduce_extreme(a, axes, keepdims, "min")


def cumsum(a: Tensor, axis: int = 0) -> Tensor:
    out = np.cumsum(a.data.astype(np.float64), axis=axis).astype(a.dtype)

    def vjp(g):
        rev = np.flip(g, axis=axis)
        return (np.ascontiguousarray(np.flip(np.cumsum(rev.astype(np.float64), axis=axis),
                                             axis=axis)).astype(a.dtype),)

    return _emit("cumsum", (a,), out, vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data.astype(np.float64)
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s64 = e / e.sum(axis=axis, keepdims=True)
    out = s64.astype(a.dtype)

    def vjp(g):
        g64 = g.astype(np.float64)
        dot = (g64 * s64).sum(axis=axis, keepdims=True)
        return ((s64 * (g64 - dot)).astype(a.dtype),)

    return _emit("softmax", (a,), out, vjp)


def l2norm(a: Tensor) -> Tensor:
    """Euclidean norm over all entries; returns a scalar tensor."""
    v = float(np.sqrt(np.sum(a.data.astype(np.float64) ** 2)))
    out = np.asarray(v, dtype=a.dtype)

    def vjp(g):
        if v == 0.0:
            return (np.zeros_like(a.data),)
        return ((float(g) / v * a.data.astype(np.float64)).astype(a.dtype),)

    return _emit("l2norm", (a,), out, vjp)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    out = (a64 @ b64).astype(a.dtype)

    def vjp(g):
        g64 = g.astype(np.float64)
        return ((g64 @ b64.T).astype(a.dtype), (a64.T @ g64).astype(a.dtype))

    return _emit("matmul", (a, b), out, vjp)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B,p,q) @ (B,q,r) -> (B,p,r)."""
    _check_same_dtype("bmm", a, b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")
    a64 = a.data.astype(np.float64)
    b64 = b.data.astype(np.float64)
    out = (a64 @ b64).astype(a.dtype)

    def vjp(g):
        g64 = g.astype(np.float64)
        ga = (g64 @ b64.swapaxes(1, 2)).astype(a.dtype)
        gb = (a64.swapaxes(1, 2) @ g64).astype(a.dtype)
        return ga, gb

    return _emit("bmm", (a, b), out, vjp)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of x (N,Ci,H,W) with filters w (Co,Ci,kh,kw)."""
    _check_same_dtype("conv2d", x, w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {tuple(x.shape)} and {tuple(w.shape)}")
    if x.shape[2] + 2 * pad < w.shape[2] or x.shape[3] + 2 * pad < w.shape[3]:
        raise ShapeError(f"conv2d: kernel {tuple(w.shape[2:])} larger than padded input")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {tuple(b.shape)} != ({w.shape[0]},)")
    out, cols = kernels.numpy_backend.conv2d_forward_cols(x.data, w.data, stride, pad)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    in_h, in_w = x.shape[2], x.shape[3]
    ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]

    def vjp(g):
        gx = kernels.conv2d_backward_input(g, w.data, stride, pad, in_h, in_w)
        gw = kernels.numpy_backend.conv2d_backward_weight_cols(g, cols, ci, kh, kw)
        if b is None:
            return gx, gw
        gb = g.astype(np.float64).sum(axis=(0, 2, 3)).astype(g.dtype)
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d", inputs, out, vjp)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Pixel-center aligned bilinear resize of x (N,C,H,W)."""
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize: expected 4-D input, got {tuple(x.shape)}")
    if out_h < 1 or out_w < 1:
        raise ShapeError("bilinear_resize: output dims must be >= 1")
    out = kernels.resize_forward(x.data, out_h, out_w)
    in_h, in_w = x.shape[2], x.shape[3]

    def vjp(g):
        return (kernels.resize_backward(g, in_h, in_w),)

    return _emit("bilinear_resize", (x,), out, vjp)


def warp(x: Tensor, ys: Tensor, xs: Tensor) -> Tensor:
    """Bilinear sampling of x (N,C,H,W) on the separable grid (ys, xs).

    ys has shape (N, H'), xs has shape (N, W'); coordinates are in
    pixel-center convention and are border-clamped.  Differentiable in
    the image and in both coordinate vectors.
    """
    if x.ndim != 4 or ys.ndim != 2 or xs.ndim != 2:
        raise ShapeError("warp: expected x (N,C,H,W), ys (N,H'), xs (N,W')")
    if ys.shape[0] != x.shape[0] or xs.shape[0] != x.shape[0]:
        raise ShapeError(f"warp: batch mismatch x={tuple(x.shape)}, "
                         f"ys={tuple(ys.shape)}, xs={tuple(xs.shape)}")
    out = kernels.warp_forward(x.data, ys.data, xs.data)

    def vjp(g):
        return kernels.warp_backward(x.data, ys.data, xs.data, g)

    return _emit("warp", (x, ys, xs), out, vjp)


def custom(op: str, inputs, out_data: np.ndarray, vjp) -> Tensor:
    """Register an externally computed op on the active tape.

    vjp(out_grad) must return one gradient array (or None) per input.
    """
    return _emit(op, tuple(inputs), np.asarray(out_data), vjp)


# -- gradient checking --------------------------------------------------------

def finite_diff_check(fn, point: Tensor, step: float) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn maps a Tensor to a scalar Tensor and must be deterministic (this is
    verified by evaluating it twice).  The relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if step <= 0:
        raise ValueError(f"finite_diff_check: step must be positive, got {step}")
    base_a = fn(Tensor(point.data.copy(), dtype=point.dtype)).item()
    base_b = fn(Tensor(point.data.copy(), dtype=point.dtype)).item()
    if base_a != base_b:
        raise ValueError("finite_diff_check: fn is non-deterministic")

    p = Tensor(point.data.copy(), requires_grad=True, dtype=point.dtype)
    with record() as rec:
        out = fn(p)
        if out.size != 1:
            raise ShapeError("finite_diff_check: fn must return a scalar")
        rec.backward(out)
    analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).astype(np.float64)

    flat = point.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        up = point.data.copy().reshape(-1)
        dn = point.data.copy().reshape(-1)
        up[i] += step
        dn[i] -= step
        # use the actually stored perturbations as the divisor
        h2 = float(up[i]) - float(dn[i])
        fu = fn(Tensor(up.reshape(point.data.shape), dtype=point.dtype)).item()
        fd = fn(Tensor(dn.reshape(point.data.shape), dtype=point.dtype)).item()
        numeric = (fu - fd) / h2
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# -- serialization ------------------------------------------------------------

def write_tnsr(fh, arr: np.ndarray):
    """Write one array in the TNSR v1 container (float32 on disk)."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    dims = " ".join(str(d) for d in arr.shape)
    header = f"TNSR v1 {arr.ndim}" + (f" {dims}" if arr.ndim else "") + "\n"
    fh.write(header.encode("ascii"))
    fh.write(arr.astype("<f4").tobytes())


def read_tnsr(fh) -> np.ndarray:
    """Read one TNSR v1 array; returns float32."""
    header = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("TNSR: truncated header")
        if ch == b"\n":
            break
        header.extend(ch)
    parts = header.decode("ascii").split()
    if len(parts) < 3 or parts[0] != "TNSR" or parts[1] != "v1":
        raise ValueError(f"TNSR: bad header {header!r}")
    ndim = int(parts[2])
    dims = [int(d) for d in parts[3:3 + ndim]]
    if len(dims) != ndim:
        raise ValueError(f"TNSR: header lists {len(dims)} dims, expected {ndim}")
    count = int(np.prod(dims)) if ndim else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("TNSR: truncated payload")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
