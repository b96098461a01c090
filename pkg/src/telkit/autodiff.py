"""Dense tensors with reverse-mode differentiation.

Covers exactly the op set the CNN and the losses need.  Values live in
row-major numpy buffers, float32 for training or float64 for gradient
checking; the two never mix silently.  The compute graph is the implicit
DAG formed by each tensor's parent references; ``backward`` walks it once
in reverse topological order and accumulates into ``.grad``.

Every forward op checks its output for NaN/Inf and raises NumericalError
instead of letting the poison spread.  Reductions use numpy's fixed
pairwise order, so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels
from .errors import GraphError, NumericalError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


class Tensor:
    """N-d value, optionally carrying a gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self):
        backward(self)


def _finite_or_raise(arr, op):
    # max/min are NaN-propagating, so two reductions catch NaN and both Infs
    if arr.size and not (np.isfinite(arr.max()) and np.isfinite(arr.min())):
        raise NumericalError(f"non-finite values in output of {op}")


def _same_dtype(op, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"{op}: mixed dtypes {dt} and {t.data.dtype}")
    return dt


def _make(op, data, parents, backward_fn):
    """Wrap a forward result; record the node only when grads can flow."""
    _finite_or_raise(data, op)
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Populate ``.grad`` on every reachable tensor with dLoss/dTensor.

    The loss must be scalar.  Calling backward twice on the same tensor
    raises; backward from a *different* loss accumulates, which is the
    documented way to sum gradient contributions.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise GraphError("backward already ran for this tensor; rebuild the graph first")
    if loss._backward is None and not loss.requires_grad:
        raise GraphError("loss is not connected to any tensor that requires grad")
    loss._done = True

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:  # iterative DFS; graphs can be deeper than the recursion limit
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node._backward is None:
            node._accumulate(g)  # leaf
            continue
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# ops

def add(a, b):
    """Elementwise sum; also accepts a rank-1 bias against (B, D) rows."""
    _same_dtype("add", a, b)
    if a.shape == b.shape:
        def bw(g):
            return ((a, g), (b, g))
    elif len(a.shape) == 2 and b.shape == (a.shape[1],):
        def bw(g):
            return ((a, g), (b, g.sum(axis=0)))
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _make("add", a.data + b.data, (a, b), bw)


def mul(a, b):
    """Elementwise (Hadamard) product of same-shape tensors."""
    _same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return ((a, g * b.data), (b, g * a.data))

    return _make("mul", a.data * b.data, (a, b), bw)


def scale(a, s):
    """Multiply by a python scalar."""
    s = float(s)

    def bw(g):
        return ((a, g * s),)

    return _make("scale", a.data * a.data.dtype.type(s), (a,), bw)


def relu(a):
    def bw(g):
        return ((a, g * (a.data > 0)),)

    return _make("relu", np.maximum(a.data, 0), (a,), bw)


def matmul(a, b):
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _same_dtype("matmul", a, b)

    def bw(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make("matmul", a.data @ b.data, (a, b), bw)


def linear(x, w, b=None):
    """x @ w (+ b): x is (B, Din), w is (Din, Dout), b is (Dout,)."""
    out = matmul(x, w)
    return add(out, b) if b is not None else out


def flatten(a):
    """(B, ...) -> (B, prod)."""
    if len(a.shape) < 2:
        raise ShapeError(f"flatten needs a batch dimension, got shape {a.shape}")
    b = a.shape[0]

    def bw(g):
        return ((a, g.reshape(a.shape)),)

    return _make("flatten", a.data.reshape(b, -1), (a,), bw)


def sum_all(a):
    """Sum every element to a scalar."""

    def bw(g):
        return ((a, np.full(a.shape, g, dtype=a.dtype)),)

    return _make("sum", a.data.sum(), (a,), bw)


def batch_stack(tensors):
    """Stack same-shape tensors along a new leading batch axis."""
    if not tensors:
        raise ShapeError("batch_stack: empty input list")
    shape = tensors[0].shape
    dt = _same_dtype("batch_stack", *tensors)
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"batch_stack: mixed shapes {shape} and {t.shape}")

    def bw(g):
        return tuple((t, g[i]) for i, t in enumerate(tensors))

    return _make("batch_stack", np.stack([t.data for t in tensors]).astype(dt), tuple(tensors), bw)


def conv2d(x, w, stride=1, padding=0):
    """2-d convolution via im2col lowering onto one matmul.

    x: (B, Cin, H, W), w: (Cout, Cin, kh, kw) -> (B, Cout, Ho, Wo) with
    Ho = (H + 2*padding - kh)//stride + 1 and likewise Wo.  The patch
    matrix is rebuilt during backward instead of being saved, trading one
    extra im2col for a much smaller retained graph.
    """
    _same_dtype("conv2d", x, w)
    if len(x.shape) != 4 or len(w.shape) != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    b, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    sh = sw = int(stride)
    ph = pw = int(padding)
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: output collapses to {ho}x{wo} for input {x.shape} kernel {w.shape}")

    cols = kernels.im2col(x.data, kh, kw, sh, sw, ph, pw)  # (B*Ho*Wo, Cin*kh*kw)
    w2 = w.data.reshape(cout, -1)
    out = (cols @ w2.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gw = gx = None
        if w.requires_grad:
            cols_b = kernels.im2col(x.data, kh, kw, sh, sw, ph, pw)
            gw = (g2.T @ cols_b).reshape(w.shape)
        if x.requires_grad:
            dcols = g2 @ w2
            gx = kernels.col2im(dcols, x.shape, kh, kw, sh, sw, ph, pw)
        return ((x, gx), (w, gw))

    return _make("conv2d", out, (x, w), bw)


def max_pool2d(x, k):
    """Non-overlapping k-by-k max pooling (stride = kernel).

    Trailing rows/cols that do not fill a window are dropped.  Gradient is
    routed to the first maximum in each window (fixed scan order), so the
    op stays deterministic even on tied values.
    """
    if len(x.shape) != 4:
        raise ShapeError(f"max_pool2d expects (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if h // k < 1 or w // k < 1:
        raise ShapeError(f"max_pool2d: window {k} larger than input {h}x{w}")
    out, idx = kernels.maxpool_fwd(x.data, int(k))

    def bw(g):
        return ((x, kernels.maxpool_bwd(np.ascontiguousarray(g), idx, x.shape)),)

    return _make("max_pool2d", out, (x,), bw)


def global_avg_pool(x):
    """(B, C, H, W) -> (B, C), mean over the spatial plane."""
    if len(x.shape) != 4:
        raise ShapeError(f"global_avg_pool expects (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    inv = 1.0 / (h * w)

    def bw(g):
        return ((x, np.broadcast_to((g * x.dtype.type(inv))[:, :, None, None], x.shape).copy()),)

    return _make("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), bw)


def log_softmax(x):
    """Row-wise log softmax of (B, C) logits, log-sum-exp stabilised."""
    if len(x.shape) != 2:
        raise ShapeError(f"log_softmax expects (B, C), got {x.shape}")
    shift = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1, keepdims=True))
    out = shift - lse
    softmax = np.exp(out)

    def bw(g):
        return ((x, g - softmax * g.sum(axis=1, keepdims=True)),)

    return _make("log_softmax", out, (x,), bw)


def row_normalize(x, eps=1e-12):
    """Scale every row of (B, D) to unit L2 norm."""
    if len(x.shape) != 2:
        raise ShapeError(f"row_normalize expects (B, D), got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True) + x.dtype.type(eps))
    out = x.data / norms

    def bw(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return ((x, (g - out * dot) / norms),)

    return _make("row_normalize", out, (x,), bw)
