"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a graph node holding the op tag, its parent
tensors, and a backward closure mapping the output gradient to input
gradients. `backward()` walks the recorded graph once in reverse
topological order and accumulates gradients on the requires_grad leaves.

Shapes follow the strictest contract that still covers the model: `add`
and `sub` permit numpy-style bias broadcasting (one operand broadcast up
to the other's shape), everything else demands exact conformance.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

# When True, every op output is checked for NaN/Inf (slow; used by tests
# and by the training loop around loss evaluation).
_CHECK_FINITE = False


def set_checked(enabled):
    """Globally enable or disable non-finite output detection."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """An n-dimensional float64 array plus its place in an autodiff graph.

    Leaves are created directly from data; every op produces a new node
    carrying `op` (tag), `_parents`, and `_backward` (a closure taking the
    output gradient and returning one gradient per parent, or None for
    parents that do not require grad). Gradients land in `.grad` on
    requires_grad leaves and accumulate across backward calls until
    `zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = f", op={self.op!r}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def square(self):
        return square(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def leaky_relu(self, slope=0.1):
        return leaky_relu(self, slope)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)


def _node(data, op, parents, backward):
    """Build a graph node; drops the backward closure on no-grad paths."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"op {op!r} produced non-finite values")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out.op = op
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None
    if out_shape != a.shape and out_shape != b.shape:
        raise ShapeError(
            f"{op}: one operand must broadcast up to the other, got {a.shape} and {b.shape}"
        )


# -- elementwise and linear primitives ----------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a.data, b.data)

    def backward(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _node(a.data + b.data, "add", (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a.data, b.data)

    def backward(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _node(a.data - b.data, "sub", (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes must match exactly, got {a.data.shape} and {b.data.shape}")

    def backward(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return _node(a.data * b.data, "mul", (a, b), backward)


def scalar_mul(x, c):
    x = _as_tensor(x)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _node(x.data * c, "scalar_mul", (x,), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )

    def backward(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _node(a.data @ b.data, "matmul", (a, b), backward)


def transpose(x):
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D tensor, got shape {x.data.shape}")

    def backward(g):
        return (g.T,)

    return _node(np.ascontiguousarray(x.data.T), "transpose", (x,), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.data.shape} as {shape}")
    old_shape = x.data.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return _node(x.data.reshape(shape), "reshape", (x,), backward)


def concat(xs, axis):
    """N-ary concatenation along `axis`; all other dims must agree."""
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: need at least one input")
    ref = xs[0].data.shape
    for x in xs[1:]:
        s = x.data.shape
        if len(s) != len(ref) or any(s[d] != ref[d] for d in range(len(ref)) if d != axis):
            raise ShapeError(f"concat: shapes {[t.data.shape for t in xs]} differ off axis {axis}")
    widths = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        grads = []
        for i, x in enumerate(xs):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(sl)])
            else:
                grads.append(None)
        return tuple(grads)

    return _node(np.concatenate([x.data for x in xs], axis=axis), "concat", tuple(xs), backward)


def concat_channels(xs):
    """Concatenate along axis 1 (the channel/feature axis)."""
    return concat(xs, axis=1)


def slice_time(x, start, stop=None):
    """Slice along the leading (time) axis; stop=None takes a single row."""
    x = _as_tensor(x)
    n = x.data.shape[0]
    if stop is None:
        stop = start + 1
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_time: range [{start}:{stop}] out of bounds for length {n}")
    in_shape = x.data.shape

    def backward(g):
        gx = np.zeros(in_shape)
        gx[start:stop] = g
        return (gx,)

    return _node(x.data[start:stop].copy(), "slice_time", (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return (g * y * (1.0 - y),)

    return _node(y, "sigmoid", (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _node(y, "tanh", (x,), backward)


def leaky_relu(x, slope=0.1):
    x = _as_tensor(x)
    factor = np.where(x.data > 0, 1.0, float(slope))

    def backward(g):
        return (g * factor,)

    return _node(x.data * factor, "leaky_relu", (x,), backward)


def dropout_mask_apply(x, mask):
    """Multiply by an externally supplied constant mask (inverted-dropout
    masks carry 0 for dropped entries and 1/(1-rate) for kept ones)."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.data.shape:
        raise ShapeError(f"dropout_mask_apply: mask shape {mask.shape} != input {x.data.shape}")

    def backward(g):
        return (g * mask,)

    return _node(x.data * mask, "dropout_mask_apply", (x,), backward)


def square(x):
    x = _as_tensor(x)

    def backward(g):
        return (g * 2.0 * x.data,)

    return _node(x.data * x.data, "square", (x,), backward)


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    in_shape = x.data.shape

    def backward(g):
        return (np.broadcast_to(g, in_shape).copy(),)

    return _node(x.data.sum(), "sum", (x,), backward)


def tmean(x):
    """Mean of all elements, as a scalar tensor."""
    x = _as_tensor(x)
    in_shape = x.data.shape
    n = x.data.size

    def backward(g):
        return (np.broadcast_to(g / n, in_shape).copy(),)

    return _node(x.data.mean(), "mean", (x,), backward)


# -- 2-D convolution ------------------------------------------------------


def conv2d_output_size(in_size, kernel, stride, padding):
    """Spatial output size: floor((in + 2*pad - kernel)/stride) + 1."""
    return (in_size + 2 * padding - kernel) // stride + 1


def _im2col(xp, kh, kw, stride, oh, ow):
    """Gather sliding windows of the padded input.

    Returns [T, C, KH, KW, OH, OW]; one strided copy per kernel offset, so
    the cost is K^2 slice copies rather than a per-pixel gather.
    """
    t, c = xp.shape[0], xp.shape[1]
    cols = np.empty((t, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols


def conv2d(x, w, stride=1, padding=0):
    """Cross-correlation of x [T,C,H,W] with kernels w [OC,C,KH,KW].

    Implemented as im2col + matmul; the backward pass reuses the gathered
    columns for the weight gradient and scatters the column gradient back
    with the same kernel-offset loop.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.data.shape}, {w.data.shape}")
    t, c, h, wid = x.data.shape
    oc, wc, kh, kw = w.data.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {wc}")
    oh = conv2d_output_size(h, kh, stride, padding)
    ow = conv2d_output_size(wid, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: output size {oh}x{ow} collapses below 1 "
            f"(input {h}x{wid}, kernel {kh}x{kw}, stride {stride}, padding {padding})"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    # [T*OH*OW, C*KH*KW] @ [C*KH*KW, OC]
    cols2 = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(t * oh * ow, c * kh * kw)
    wflat = w.data.reshape(oc, c * kh * kw)
    out = (cols2 @ wflat.T).reshape(t, oh, ow, oc).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(t * oh * ow, oc)
        gw = None
        gx = None
        if w.requires_grad:
            gw = (g2.T @ cols2).reshape(oc, c, kh, kw)
        if x.requires_grad:
            gcols = (g2 @ wflat).reshape(t, oh, ow, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + wid] if padding else gxp
        return (gx, gw)

    return _node(np.ascontiguousarray(out), "conv2d", (x, w), backward)


# -- backward pass --------------------------------------------------------


def topo_order(root):
    """All grad-requiring nodes reachable from `root`, parents first.

    Iterative depth-first post-order, so sequence models of any length do
    not hit the interpreter recursion limit.
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate `.grad` on every requires_grad leaf reachable from `loss`.

    Repeated calls accumulate; call `zero_grad` on the leaves in between
    for a fresh gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # requires_grad leaf: accumulate
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg.astype(np.float64, copy=True)
            else:
                acc += pg


def finite_difference_check(f, x, step=1e-5, sample=None, seed=0):
    """Max relative discrepancy between analytic and central-difference
    gradients of the scalar function `f`.

    `x` is a Tensor or a sequence of Tensors; `f` is called with no
    arguments and must rebuild its graph from the current leaf values
    (deterministically — disable dropout). With `sample` set, only that
    many randomly chosen components per tensor are perturbed, which keeps
    model-scale checks tractable; None checks every component.

    Discrepancy per component: |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    params = [x] if isinstance(x, Tensor) else list(x)
    for p in params:
        p.zero_grad()
    loss = f()
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        if not p.requires_grad:
            continue
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        if sample is None or p.data.size <= sample:
            indices = range(p.data.size)
        else:
            indices = rng.choice(p.data.size, size=sample, replace=False)
        flat = p.data.reshape(-1)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
