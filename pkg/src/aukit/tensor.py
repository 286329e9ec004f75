"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` is an immutable N-dimensional float64 array.  Differentiable
operations are module-level functions; when a ``Tape`` is active (entered as
a context manager) every operation touching a tracked tensor records a node
with a backward closure, and ``Tape.backward`` replays the nodes in reverse
to accumulate gradients.  The tape is rebuilt on every forward pass
(define-by-run), so arbitrary control flow is fine.

``grad_check`` provides the central-finite-difference oracle used throughout
the test suite.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericalError, ShapeError

# When True, every operation validates that its output is finite.  Off by
# default: the constructor always validates, so non-finite values can only
# appear through arithmetic (e.g. overflow), which the tests enable this to
# catch.
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


_ids = itertools.count(1)


class Tensor:
    """Immutable dense float64 array with shape metadata and a value id."""

    __slots__ = ("data", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        # Copy so freezing never touches a caller-owned buffer.
        arr = np.array(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor construction requires finite values")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Fast path for op outputs; finiteness checked only in debug mode."""
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericalError("operation produced a non-finite value")
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = False
        out.id = next(_ids)
        return out

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "Tensor":
        return cls._wrap(np.zeros(shape))

    @classmethod
    def ones(cls, shape: tuple[int, ...]) -> "Tensor":
        return cls._wrap(np.ones(shape))

    @classmethod
    def full(cls, shape: tuple[int, ...], value: float) -> "Tensor":
        return cls._wrap(np.full(shape, float(value)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_ACTIVE = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_ACTIVE, "stack", None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out_id", "backward")

    def __init__(self, out_id: int, backward: Callable):
        self.out_id = out_id
        self.backward = backward


class Tape:
    """Append-only record of operations for one forward pass.

    Nodes are recorded in execution order, so reverse iteration is a valid
    reverse-topological traversal.  ``gradients`` maps value ids to
    accumulated gradient arrays after ``backward``.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: set[int] = set()
        self.gradients: dict[int, np.ndarray] = {}

    def __enter__(self) -> "Tape":
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = []
            _ACTIVE.stack = stack
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.stack.pop()

    def _accumulate(self, tensor_id: int, value: np.ndarray) -> None:
        existing = self.gradients.get(tensor_id)
        if existing is None:
            self.gradients[tensor_id] = np.array(value, dtype=np.float64)
        else:
            existing += value

    def backward(self, loss: Tensor) -> None:
        """Populate gradients for everything reachable from ``loss``."""
        if loss.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.gradients = {loss.id: np.ones((), dtype=np.float64)}
        for node in reversed(self._nodes):
            grad_out = self.gradients.get(node.out_id)
            if grad_out is not None:
                node.backward(grad_out, self._accumulate)

    def grad(self, tensor: Tensor) -> np.ndarray | None:
        return self.gradients.get(tensor.id)


def _record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Record ``out = op(inputs)`` on the active tape if gradients can flow.

    ``backward(grad_out, accumulate)`` must push gradients to the inputs via
    ``accumulate(tensor_id, array)``.
    """
    tape = _active_tape()
    if tape is None:
        return out
    tracked = any(t.requires_grad or t.id in tape._watched for t in inputs)
    if tracked:
        tape._watched.add(out.id)
        tape._nodes.append(_Node(out.id, backward))
    return out


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor._wrap(a.data + b.data)

    def backward(g, acc):
        acc(a.id, g)
        acc(b.id, g)

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor._wrap(a.data - b.data)

    def backward(g, acc):
        acc(a.id, g)
        acc(b.id, -g)

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor._wrap(a.data * b.data)

    def backward(g, acc):
        acc(a.id, g * b.data)
        acc(b.id, g * a.data)

    return _record(out, (a, b), backward)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor._wrap(a.data * s)

    def backward(g, acc):
        acc(a.id, g * s)

    return _record(out, (a,), backward)


def scalar_add(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor._wrap(a.data + s)

    def backward(g, acc):
        acc(a.id, g)

    return _record(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Evaluate from the side that keeps exp() from overflowing.
    pos = x >= 0
    y = np.empty_like(x)
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor._wrap(y)
    y_saved = out.data

    def backward(g, acc):
        acc(a.id, g * y_saved * (1.0 - y_saved))

    return _record(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.tanh(a.data))
    y_saved = out.data

    def backward(g, acc):
        acc(a.id, g * (1.0 - y_saved * y_saved))

    return _record(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive values")
    out = Tensor._wrap(np.log(a.data))

    def backward(g, acc):
        acc(a.id, g / a.data)

    return _record(out, (a,), backward)


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    """Clip to [low, high]; gradient is 1 strictly inside, 0 outside."""
    out = Tensor._wrap(np.clip(a.data, low, high))
    interior = (a.data > low) & (a.data < high)

    def backward(g, acc):
        acc(a.id, g * interior)

    return _record(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    ids = [t.id for t in tensors]

    def backward(g, acc):
        for tid, piece in zip(ids, np.split(g, splits, axis=axis)):
            acc(tid, piece)

    return _record(out, tuple(tensors), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    dim = a.shape[axis]
    if not (0 <= start < stop <= dim):
        raise ShapeError(f"slice [{start}, {stop}) out of range for axis of size {dim}")
    index = tuple(slice(None) if d != axis else slice(start, stop) for d in range(a.data.ndim))
    out = Tensor._wrap(a.data[index])
    in_shape = a.shape

    def backward(g, acc):
        full = np.zeros(in_shape)
        full[index] = g
        acc(a.id, full)

    return _record(out, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = Tensor._wrap(a.data.reshape(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from None
    in_shape = a.shape

    def backward(g, acc):
        acc(a.id, g.reshape(in_shape))

    return _record(out, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor._wrap(np.transpose(a.data, axes))
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(g, acc):
        acc(a.id, np.transpose(g, inverse))

    return _record(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor._wrap(a.data @ b.data)

    def backward(g, acc):
        acc(a.id, g @ b.data.T)
        acc(b.id, a.data.T @ g)

    return _record(out, (a, b), backward)


def per_node_head(feat: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-node channel contraction: out[..., t, j] = w[j] . feat[..., :, t, j] + b[j].

    ``feat`` is (..., C, T, N); ``weight`` is (N, C); ``bias`` is (N,).
    Each node position j gets its own linear functional over channels.
    """
    n, c = weight.shape
    if feat.data.ndim < 3 or feat.shape[-1] != n or feat.shape[-3] != c:
        raise ShapeError(f"per_node_head: feat {feat.shape} vs weight {weight.shape}")
    if bias.shape != (n,):
        raise ShapeError(f"per_node_head: bias shape {bias.shape} != ({n},)")
    out = Tensor._wrap(
        np.einsum("...ctj,jc->...tj", feat.data, weight.data) + bias.data
    )

    def backward(g, acc):
        lead = feat.shape[:-3]
        g2 = g.reshape((-1,) + g.shape[len(lead):])
        f2 = feat.data.reshape((-1,) + feat.shape[len(lead):])
        acc(weight.id, np.einsum("ntj,nctj->jc", g2, f2))
        acc(bias.id, g2.sum(axis=(0, 1)))
        acc(feat.id, np.einsum("jc,...tj->...ctj", weight.data, g))

    return _record(out, (feat, weight, bias), backward)


def bias_add_row(a: Tensor, bias: Tensor) -> Tensor:
    """Add a length-N bias to every row of an (R, N) matrix."""
    if a.data.ndim != 2 or bias.data.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise ShapeError(f"bias_add_row: shapes {a.shape} and {bias.shape}")
    out = Tensor._wrap(a.data + bias.data[None, :])

    def backward(g, acc):
        acc(a.id, g)
        acc(bias.id, g.sum(axis=0))

    return _record(out, (a, bias), backward)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.asarray(a.data.sum()))
    in_shape = a.shape

    def backward(g, acc):
        acc(a.id, np.broadcast_to(g, in_shape).copy())

    return _record(out, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = Tensor._wrap(np.asarray(a.data.mean()))
    in_shape = a.shape

    def backward(g, acc):
        acc(a.id, np.broadcast_to(g / n, in_shape).copy())

    return _record(out, (a,), backward)


def broadcast_mul_channelwise(weight_map: Tensor, feat: Tensor) -> Tensor:
    """Multiply every channel of ``feat`` by one spatial map.

    Shapes: map (H, W) with feat (C, H, W), or batched map (B, H, W) with
    feat (B, C, H, W).
    """
    if weight_map.data.ndim == 2 and feat.data.ndim == 3:
        if weight_map.shape != feat.shape[1:]:
            raise ShapeError(
                f"channelwise mul: map {weight_map.shape} vs feat {feat.shape}"
            )
        m = weight_map.data[None, :, :]
        sum_axis = 0
    elif weight_map.data.ndim == 3 and feat.data.ndim == 4:
        if weight_map.shape != (feat.shape[0],) + feat.shape[2:]:
            raise ShapeError(
                f"channelwise mul: map {weight_map.shape} vs feat {feat.shape}"
            )
        m = weight_map.data[:, None, :, :]
        sum_axis = 1
    else:
        raise ShapeError(
            f"channelwise mul: unsupported ranks {weight_map.shape} and {feat.shape}"
        )
    out = Tensor._wrap(m * feat.data)

    def backward(g, acc):
        acc(weight_map.id, (g * feat.data).sum(axis=sum_axis))
        acc(feat.id, g * m)

    return _record(out, (weight_map, feat), backward)


def pad_edge(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Replicate the first/last slice along ``axis`` (edge padding)."""
    if before < 0 or after < 0:
        raise ShapeError("pad amounts must be non-negative")
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    out = Tensor._wrap(np.pad(a.data, widths, mode="edge"))
    dim = a.shape[axis]

    def backward(g, acc):
        idx_interior = tuple(
            slice(before, before + dim) if d == axis else slice(None)
            for d in range(g.ndim)
        )
        grad = np.array(g[idx_interior])
        if before:
            idx_lo = tuple(
                slice(0, before) if d == axis else slice(None) for d in range(g.ndim)
            )
            first = tuple(
                slice(0, 1) if d == axis else slice(None) for d in range(g.ndim)
            )
            grad[first] += g[idx_lo].sum(axis=axis, keepdims=True)
        if after:
            idx_hi = tuple(
                slice(before + dim, None) if d == axis else slice(None)
                for d in range(g.ndim)
            )
            last = tuple(
                slice(dim - 1, dim) if d == axis else slice(None) for d in range(g.ndim)
            )
            grad[last] += g[idx_hi].sum(axis=axis, keepdims=True)
        acc(a.id, grad)

    return _record(out, (a,), backward)


def graph_matmul(matrix: Tensor, feat: Tensor) -> Tensor:
    """Mix the last (node) axis of ``feat`` by an m x m matrix.

    out[..., j] = sum_k matrix[j, k] * feat[..., k]
    """
    m = matrix.shape
    if len(m) != 2 or m[0] != m[1] or feat.shape[-1] != m[0]:
        raise ShapeError(f"graph_matmul: matrix {m} vs feat {feat.shape}")
    out = Tensor._wrap(np.einsum("jk,...k->...j", matrix.data, feat.data))

    def backward(g, acc):
        n = m[0]
        g2 = g.reshape(-1, n)
        f2 = feat.data.reshape(-1, n)
        acc(matrix.id, g2.T @ f2)
        acc(feat.id, np.einsum("jk,...j->...k", matrix.data, g))

    return _record(out, (matrix, feat), backward)


# ---------------------------------------------------------------------------
# Convolution and pooling
# ---------------------------------------------------------------------------


def _conv_out_size(size: int, k: int, pad: int, stride: int, label: str) -> int:
    span = size + 2 * pad - k
    if k > size + 2 * pad:
        raise ShapeError(f"conv2d: kernel {label}={k} exceeds padded input {size + 2 * pad}")
    if span % stride != 0:
        raise ShapeError(
            f"conv2d: ({size} + 2*{pad} - {k}) not divisible by stride {stride}"
        )
    return span // stride + 1


def _windows(padded: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Sliding windows over the trailing two axes, as a zero-copy view."""
    *lead, height, width = padded.shape
    oh = (height - kh) // sh + 1
    ow = (width - kw) // sw + 1
    strides = padded.strides
    shape = tuple(lead) + (oh, ow, kh, kw)
    new_strides = strides[:-2] + (strides[-2] * sh, strides[-1] * sw, strides[-2], strides[-1])
    return np.lib.stride_tricks.as_strided(padded, shape, new_strides)


def _scatter_windows(dwindows: np.ndarray, padded_shape: tuple[int, ...], sh: int, sw: int) -> np.ndarray:
    """Accumulate window gradients back onto the padded input."""
    *lead, oh, ow, kh, kw = dwindows.shape
    dpad = np.zeros(padded_shape)
    for a in range(kh):
        for b in range(kw):
            dpad[..., a : a + oh * sh : sh, b : b + ow * sw : sw] += dwindows[..., a, b]
    return dpad


def conv2d(
    input: Tensor,
    kernels: Tensor,
    bias: Tensor,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``input`` is (C_in, H, W) or batched (B, C_in, H, W); ``kernels`` is
    (C_out, C_in, k_h, k_w); ``bias`` is (C_out,).  The output spatial size
    must divide exactly: (H + 2*pad - k) / stride + 1.
    """
    batched = input.data.ndim == 4
    x = input.data if batched else input.data[None]
    if x.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks input {input.shape} kernels {kernels.shape}")
    co, ci, kh, kw = kernels.shape
    if x.shape[1] != ci:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != kernel channels {ci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({co},)")
    sh, sw = stride
    ph, pw = padding
    _conv_out_size(x.shape[2], kh, ph, sh, "k_h")
    _conv_out_size(x.shape[3], kw, pw, sw, "k_w")

    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = _windows(xp, kh, kw, sh, sw)  # (B, C_in, oh, ow, kh, kw)
    b, _, oh, ow = win.shape[:4]
    # Flatten to matrix products so the contraction runs on BLAS.
    win2 = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b, oh * ow, ci * kh * kw
    )
    w2 = kernels.data.reshape(co, ci * kh * kw)
    y = (win2 @ w2.T).transpose(0, 2, 1).reshape(b, co, oh, ow)
    y = y + bias.data[None, :, None, None]
    out = Tensor._wrap(y if batched else y[0])
    padded_shape = xp.shape

    def backward(g, acc):
        gb = g if batched else g[None]
        acc(bias.id, gb.sum(axis=(0, 2, 3)))
        g2 = np.ascontiguousarray(gb.transpose(0, 2, 3, 1)).reshape(-1, co)
        acc(kernels.id, (g2.T @ win2.reshape(-1, ci * kh * kw)).reshape(kernels.shape))
        dwin = (g2 @ w2).reshape(b, oh, ow, ci, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dpad = _scatter_windows(dwin, padded_shape, sh, sw)
        dx = dpad[:, :, ph : padded_shape[2] - ph, pw : padded_shape[3] - pw] if (ph or pw) else dpad
        acc(input.id, dx if batched else dx[0])

    return _record(out, (input, kernels, bias), backward)


def conv2d_per_patch(
    input: Tensor,
    kernels: Tensor,
    bias: Tensor,
    padding: tuple[int, int] = (1, 1),
) -> Tensor:
    """Stride-1 cross-correlation with an independent kernel bank per patch.

    ``input`` is (P, C_in, h, w) or batched (B, P, C_in, h, w); ``kernels``
    is (P, C_out, C_in, k_h, k_w); ``bias`` is (P, C_out).  Each of the P
    patches is padded and convolved independently with its own bank.
    """
    batched = input.data.ndim == 5
    x = input.data if batched else input.data[None]
    p, co, ci, kh, kw = kernels.shape
    if x.ndim != 5 or x.shape[1] != p or x.shape[2] != ci:
        raise ShapeError(
            f"conv2d_per_patch: input {input.shape} vs kernels {kernels.shape}"
        )
    if bias.shape != (p, co):
        raise ShapeError(f"conv2d_per_patch: bias shape {bias.shape} != ({p}, {co})")
    ph, pw = padding
    _conv_out_size(x.shape[3], kh, ph, 1, "k_h")
    _conv_out_size(x.shape[4], kw, pw, 1, "k_w")

    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = _windows(xp, kh, kw, 1, 1)  # (B, P, C_in, oh, ow, kh, kw)
    b, _, _, oh, ow = win.shape[:5]
    k = ci * kh * kw
    # One BLAS matmul per patch bank: (P, B*oh*ow, k) @ (P, k, C_out).
    win2 = np.ascontiguousarray(win.transpose(1, 0, 3, 4, 2, 5, 6)).reshape(
        p, b * oh * ow, k
    )
    w2 = kernels.data.reshape(p, co, k)
    y2 = win2 @ w2.transpose(0, 2, 1)  # (P, B*oh*ow, C_out)
    y = y2.reshape(p, b, oh, ow, co).transpose(1, 0, 4, 2, 3)
    y = y + bias.data[None, :, :, None, None]
    out = Tensor._wrap(y if batched else y[0])
    padded_shape = xp.shape

    def backward(g, acc):
        gb = g if batched else g[None]
        acc(bias.id, gb.sum(axis=(0, 3, 4)))
        g2 = np.ascontiguousarray(gb.transpose(1, 0, 3, 4, 2)).reshape(p, b * oh * ow, co)
        acc(kernels.id, np.matmul(g2.transpose(0, 2, 1), win2).reshape(kernels.shape))
        dwin = (g2 @ w2).reshape(p, b, oh, ow, ci, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6)
        dpad = _scatter_windows(dwin, padded_shape, 1, 1)
        dx = dpad[..., ph : padded_shape[3] - ph, pw : padded_shape[4] - pw] if (ph or pw) else dpad
        acc(input.id, dx if batched else dx[0])

    return _record(out, (input, kernels, bias), backward)


def maxpool2d(input: Tensor) -> Tensor:
    """Max over 2x2 fields with stride (2, 2).

    On ties the first cell in row-major order within the field receives the
    whole gradient.
    """
    batched = input.data.ndim == 4
    x = input.data if batched else input.data[None]
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d: bad rank for shape {input.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: spatial dims ({h}, {w}) must be even")
    fields = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = fields.reshape(b, c, h // 2, w // 2, 4)
    argmax = flat.argmax(axis=-1)  # first max in row-major field order
    y = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    out = Tensor._wrap(y if batched else y[0])

    def backward(g, acc):
        gb = g if batched else g[None]
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, argmax[..., None], gb[..., None], axis=-1)
        dx = (
            dflat.reshape(b, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
        acc(input.id, dx if batched else dx[0])

    return _record(out, (input,), backward)


def global_avg_pool(input: Tensor) -> Tensor:
    """Mean over the spatial axes: (C, H, W) -> (C,) or (B, C, H, W) -> (B, C)."""
    if input.data.ndim == 3:
        c, h, w = input.shape
        out = Tensor._wrap(input.data.mean(axis=(1, 2)))

        def backward(g, acc):
            acc(input.id, np.broadcast_to(g[:, None, None] / (h * w), (c, h, w)).copy())

    elif input.data.ndim == 4:
        b, c, h, w = input.shape
        out = Tensor._wrap(input.data.mean(axis=(2, 3)))

        def backward(g, acc):
            acc(
                input.id,
                np.broadcast_to(g[:, :, None, None] / (h * w), (b, c, h, w)).copy(),
            )

    else:
        raise ShapeError(f"global_avg_pool: bad rank for shape {input.shape}")
    return _record(out, (input,), backward)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[..., Tensor],
    points: Tensor | Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of a scalar function against central
    finite differences.

    Returns max over checked coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``.  ``f`` must be a pure
    function of its tensor arguments.  With ``max_coords`` set, at most that
    many coordinates per argument are probed (deterministically sampled),
    which keeps whole-network checks affordable.
    """
    if eps <= 0:
        raise DomainError("grad_check requires eps > 0")
    single = isinstance(points, Tensor)
    pts = [points] if single else list(points)
    params = [Tensor(p.data, requires_grad=True) for p in pts]

    with Tape() as tape:
        y = f(*params)
        if y.shape != ():
            raise ShapeError(f"grad_check needs a scalar function, got shape {y.shape}")
        tape.backward(y)
    analytic = [
        tape.grad(p) if tape.grad(p) is not None else np.zeros(p.shape) for p in params
    ]

    from .rng import Xoshiro256pp  # local import avoids a cycle at module load

    picker = Xoshiro256pp(seed)
    worst = 0.0
    for i, p in enumerate(params):
        n = p.size
        if max_coords is None or n <= max_coords:
            coords = range(n)
        else:
            coords = sorted({picker.randint(n) for _ in range(max_coords)})
        base = p.data
        for flat_idx in coords:
            bumped = base.copy().reshape(-1)
            bumped[flat_idx] += eps
            plus = _eval_detached(f, params, i, bumped.reshape(p.shape))
            bumped[flat_idx] -= 2 * eps
            minus = _eval_detached(f, params, i, bumped.reshape(p.shape))
            numeric = (plus - minus) / (2 * eps)
            ana = analytic[i].reshape(-1)[flat_idx]
            err = abs(ana - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def _eval_detached(f, params: list[Tensor], index: int, replacement: np.ndarray) -> float:
    args = list(params)
    args[index] = Tensor(replacement)
    return f(*args).item()
