"""Reverse-mode automatic differentiation over NumPy arrays.

A `Tensor` wraps an ndarray plus the closure that maps its output
gradient to parent gradients.  Graphs are implicit: each op records its
parents, `backward` topologically sorts from the root and visits every
node exactly once, adding contributions where paths rejoin.  Gradients
are float arrays of the operand dtype (float64 unless the caller opted
into float32).

Policy choices, enforced here:

* `backward` requires a scalar root and may run once per graph; a second
  call raises.  Leaf `.grad` fields accumulate across graphs until
  `zero_grad`.
* `grad(root, wrt=...)` returns gradients functionally and never touches
  `.grad`, so attack loops can differentiate w.r.t. inputs while leaving
  parameter state untouched bit for bit.  Both entry points prune: only
  the part of the graph that can reach a requested target is visited.
* Shape errors name the primitive and both operand shapes.
"""

import numpy as np

from . import kernels

_FLOAT_KINDS = ("f",)


class ShapeError(ValueError):
    """Operand shapes incompatible for a primitive."""


def _shape_err(op, *shapes):
    got = " and ".join(str(tuple(s)) for s in shapes)
    raise ShapeError(f"{op}: incompatible shapes {got}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_used")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._op = "leaf"
        self._used = False

    @classmethod
    def _from_op(cls, data, parents, vjp, op):
        if not any(p.requires_grad for p in parents):
            out = cls(data)
            out._op = op
            return out
        out = cls(data, requires_grad=True)
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
        return out

    # ---- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        """Same values, no history; gradients stop here."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # ---- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def flatten(self):
        return flatten(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- graph walking --------------------------------------------------------


def _topo(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, ready = stack.pop()
        if ready:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _pull(root, targets):
    """Accumulated output-gradients for every node that can reach a target."""
    if root.data.size != 1:
        _shape_err("backward (root must be scalar)", root.data.shape)
    if root._used:
        raise RuntimeError("backward: this graph was already differentiated; "
                           "re-run the forward pass to differentiate again")
    root._used = True
    order = _topo(root)
    target_ids = {id(t) for t in targets}
    need = {}
    for node in order:  # parents precede children here
        need[id(node)] = id(node) in target_ids or any(need[id(p)] for p in node._parents)
    acc = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = acc.pop(id(node), None)
        if g is None or node._vjp is None:
            if g is not None and id(node) in target_ids:
                acc[id(node)] = g  # keep target grads
            continue
        if id(node) in target_ids:
            acc[id(node)] = g  # a target can also be an interior node
        needed = tuple(need[id(p)] for p in node._parents)
        if not any(needed):
            continue
        for p, pg in zip(node._parents, node._vjp(g, needed)):
            if pg is None:
                continue
            cur = acc.get(id(p))
            acc[id(p)] = pg if cur is None else cur + pg
    return acc


def backward(root):
    """Populate `.grad` (additively) on every reachable requires-grad leaf."""
    leaves = [n for n in _topo(root) if n._vjp is None and n.requires_grad]
    acc = _pull(root, leaves)
    for leaf in leaves:
        g = acc.get(id(leaf))
        if g is None:
            continue
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def grad(root, wrt):
    """Gradients of a scalar root w.r.t. the given tensors, `.grad` untouched.

    Tensors the root does not depend on get zero gradients.
    """
    acc = _pull(root, list(wrt))
    return [acc.get(id(t), np.zeros_like(t.data)) for t in wrt]


# ---- primitives -----------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError:
        _shape_err("add", a.shape, b.shape)

    def vjp(g, needed):
        return (_unbroadcast(g, a.data.shape) if needed[0] else None,
                _unbroadcast(g, b.data.shape) if needed[1] else None)

    return Tensor._from_op(out, (a, b), vjp, "add")


def subtract(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        out = a.data - b.data
    except ValueError:
        _shape_err("subtract", a.shape, b.shape)

    def vjp(g, needed):
        return (_unbroadcast(g, a.data.shape) if needed[0] else None,
                _unbroadcast(-g, b.data.shape) if needed[1] else None)

    return Tensor._from_op(out, (a, b), vjp, "subtract")


def multiply(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        _shape_err("multiply", a.shape, b.shape)

    def vjp(g, needed):
        return (_unbroadcast(g * b.data, a.data.shape) if needed[0] else None,
                _unbroadcast(g * a.data, b.data.shape) if needed[1] else None)

    return Tensor._from_op(out, (a, b), vjp, "multiply")


def divide(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    try:
        out = a.data / b.data
    except ValueError:
        _shape_err("divide", a.shape, b.shape)

    def vjp(g, needed):
        return (_unbroadcast(g / b.data, a.data.shape) if needed[0] else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape) if needed[1] else None)

    return Tensor._from_op(out, (a, b), vjp, "divide")


def negative(a):
    def vjp(g, needed):
        return (-g,)

    return Tensor._from_op(-a.data, (a,), vjp, "negative")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        _shape_err("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def vjp(g, needed):
        return (g @ b.data.T if needed[0] else None,
                a.data.T @ g if needed[1] else None)

    return Tensor._from_op(out, (a, b), vjp, "matmul")


def transpose(a):
    if a.ndim != 2:
        _shape_err("transpose (2-d only)", a.shape)

    def vjp(g, needed):
        return (np.ascontiguousarray(g.T),)

    return Tensor._from_op(np.ascontiguousarray(a.data.T), (a,), vjp, "transpose")


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        _shape_err(f"reshape (target {tuple(shape)})", a.shape)

    def vjp(g, needed):
        return (g.reshape(a.data.shape),)

    return Tensor._from_op(out, (a,), vjp, "reshape")


def flatten(a):
    """Collapse all but the leading (batch) axis."""
    if a.ndim < 1:
        _shape_err("flatten", a.shape)
    return reshape(a, (a.shape[0], -1))


def relu(a):
    mask = a.data > 0

    def vjp(g, needed):
        return (g * mask,)

    return Tensor._from_op(a.data * mask, (a,), vjp, "relu")


def exp(a):
    out = np.exp(a.data)

    def vjp(g, needed):
        return (g * out,)

    return Tensor._from_op(out, (a,), vjp, "exp")


def log(a):
    out = np.log(a.data)

    def vjp(g, needed):
        return (g / a.data,)

    return Tensor._from_op(out, (a,), vjp, "log")


def clamp(a, lo=None, hi=None):
    """Clip values; gradient passes wherever the input lies inside [lo, hi]."""
    out = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data)
    if lo is not None:
        mask *= a.data >= lo
    if hi is not None:
        mask *= a.data <= hi

    def vjp(g, needed):
        return (g * mask,)

    return Tensor._from_op(out, (a,), vjp, "clamp")


def sign(a):
    """Elementwise sign; gradient is zero everywhere (a step function)."""

    def vjp(g, needed):
        return (np.zeros_like(a.data),)

    return Tensor._from_op(np.sign(a.data), (a,), vjp, "sign")


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g, needed):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._from_op(out, (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[i] for i in np.atleast_1d(axis)]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g, needed):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.data.shape).copy(),)

    return Tensor._from_op(out, (a,), vjp, "mean")


def amax(a, axis, keepdims=False):
    """Max along one axis; gradient goes to the first maximal entry."""
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g, needed):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)

    return Tensor._from_op(out, (a,), vjp, "amax")


def log_softmax(a):
    """Row-wise log-softmax of a (batch, classes) matrix."""
    if a.ndim != 2:
        _shape_err("log_softmax (expects (batch, classes))", a.shape)
    z = a.data - a.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)

    def vjp(g, needed):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return Tensor._from_op(out, (a,), vjp, "log_softmax")


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy from raw logits and integer labels.

    Fused with softmax for stability; the backward is (p - onehot)/m.
    """
    if logits.ndim != 2:
        _shape_err("softmax_cross_entropy (expects (batch, classes))", logits.shape)
    y = np.asarray(labels)
    if y.dtype.kind not in "iu":
        raise ValueError("softmax_cross_entropy: labels must be integers")
    m, d = logits.shape
    if y.shape != (m,):
        _shape_err("softmax_cross_entropy (labels)", logits.shape, y.shape)
    if y.size and (y.min() < 0 or y.max() >= d):
        raise ValueError(f"softmax_cross_entropy: label outside [0, {d})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = np.asarray((lse[:, 0] - z[np.arange(m), y]).mean())
    p = np.exp(z - lse)

    def vjp(g, needed):
        gx = p.copy()
        gx[np.arange(m), y] -= 1.0
        gx *= g / m
        return (gx,)

    return Tensor._from_op(out, (logits,), vjp, "softmax_cross_entropy")


def kl_div(log_p, log_q):
    """Mean over rows of KL(P || Q), both given as log-probabilities."""
    if log_p.shape != log_q.shape or log_p.ndim != 2:
        _shape_err("kl_div", log_p.shape, log_q.shape)
    per_cell = multiply(exp(log_p), subtract(log_p, log_q))
    return tmean(tsum(per_cell, axis=1))


def conv2d(x, w, b=None, padding=0):
    """Stride-1 2-d convolution (cross-correlation) with zero padding."""
    if x.ndim != 4 or w.ndim != 4:
        _shape_err("conv2d", x.shape, w.shape)
    n, c, h, wd = x.shape
    co, ci, k, k2 = w.shape
    if ci != c or k != k2:
        _shape_err("conv2d (weight vs input)", x.shape, w.shape)
    if h + 2 * padding < k or wd + 2 * padding < k:
        _shape_err(f"conv2d (kernel {k} too large for padded input)", x.shape)
    if b is not None and b.shape != (co,):
        _shape_err("conv2d (bias)", w.shape, b.shape)
    out, cols = kernels.conv2d_fwd(x.data, w.data, None if b is None else b.data, padding)
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g, needed):
        gx, gw = kernels.conv2d_bwd(g, x.data.shape, w.data, cols, padding,
                                    needed[0], needed[1])
        if b is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2, 3)) if needed[2] else None
        return (gx, gw, gb)

    return Tensor._from_op(out, parents, vjp, "conv2d")


def maxpool2x2(x):
    """2x2/stride-2 max pooling; odd trailing rows/columns are dropped."""
    if x.ndim != 4:
        _shape_err("maxpool2x2", x.shape)
    out, idx = kernels.maxpool2x2_fwd(x.data)

    def vjp(g, needed):
        return (kernels.maxpool2x2_bwd(idx, g, x.data.shape),)

    return Tensor._from_op(out, (x,), vjp, "maxpool2x2")


def pairwise_sq_dist(a):
    """Matrix of squared Euclidean distances between rows of a (m, d) batch.

    Exact zeros on the diagonal and no negative entries, so a Gaussian
    Gram built from it has a clean unit diagonal.
    """
    if a.ndim != 2:
        _shape_err("pairwise_sq_dist (expects (m, d))", a.shape)
    gram = a.data @ a.data.T
    sq = np.diag(gram)[:, None] + np.diag(gram)[None, :] - 2.0 * gram
    np.maximum(sq, 0.0, out=sq)
    np.fill_diagonal(sq, 0.0)

    def vjp(g, needed):
        s = g + g.T
        np.fill_diagonal(s, 0.0)
        return (2.0 * (s.sum(axis=1)[:, None] * a.data - s @ a.data),)

    return Tensor._from_op(sq, (a,), vjp, "pairwise_sq_dist")


def trace(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        _shape_err("trace (square matrix)", a.shape)

    def vjp(g, needed):
        return (np.asarray(g) * np.eye(a.shape[0], dtype=a.dtype),)

    return Tensor._from_op(np.asarray(np.trace(a.data)), (a,), vjp, "trace")


# ---- verification helper --------------------------------------------------


def finite_diff_check(f, x, h=1e-5):
    """Worst relative disagreement between autodiff and central differences.

    `f` maps a Tensor to a scalar Tensor.  Returns
    max_i |analytic_i - fd_i| / max(1, |analytic_i|).
    """
    x = x if isinstance(x, Tensor) else Tensor(x, requires_grad=True)
    analytic = grad(f(x), [x])[0]
    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = f(Tensor(x.data)).item()
        flat[i] = keep - h
        lo = f(Tensor(x.data)).item()
        flat[i] = keep
        fd = (hi - lo) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
