"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 for training, float64 for gradient
checking). Differentiable operations are free functions; while a Tape is
active and recording, each operation appends one node holding its parents
and a backward rule. ``backward(loss)`` walks the tape once in reverse and
accumulates gradients into the ``grad`` slot of every tensor it reaches.
Gradients keep accumulating across calls until ``zero_grads``.
"""

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the operation."""


class NumericError(ValueError):
    """Operand values are outside the operation's numeric domain."""


class DegenerateStatisticsError(ValueError):
    """Too few samples to form the statistics the operation needs."""


class Tensor:
    """Dense real array, optionally a node in a differentiation graph.

    ``data`` is immutable by convention after creation; only ``grad`` is
    written, and only during backward passes.
    """

    __slots__ = ("data", "grad", "graph_id", "_tape")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.graph_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class _Node:
    __slots__ = ("out", "parents", "grad_fn")

    def __init__(self, out, parents, grad_fn):
        self.out = out
        self.parents = parents
        self.grad_fn = grad_fn


_TAPE_STACK = []


class Tape:
    """Ordered record of operations; parents always precede their children.

    Use as a context manager to make it the active tape. A frozen tape
    stops recording but keeps its nodes for backward passes. One tape
    belongs to one execution context; do not share an active tape across
    threads.
    """

    def __init__(self):
        self.nodes = []
        self.frozen = False

    def freeze(self):
        self.frozen = True

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

        Leaves are tensors that are not outputs of recorded operations
        (parameters and graph inputs). Gradients of intermediate tensors
        stay local to the pass; each call propagates a fresh seed of 1,
        so repeated calls add up.
        """
        if loss.data.shape != ():
            raise DimensionError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        if loss._tape is not self or loss.graph_id is None:
            raise ValueError("loss was not recorded on this tape")
        # Pass-local gradients keep repeated backward calls additive.
        local = {id(loss): np.ones((), dtype=loss.data.dtype)}
        owned = set()
        leaves = {}
        for node in reversed(self.nodes[: loss.graph_id + 1]):
            g = local.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None:
                    continue
                key = id(parent)
                acc = local.get(key)
                if acc is None:
                    local[key] = pg
                    if parent.graph_id is None or parent._tape is not self:
                        leaves[key] = parent
                elif key in owned:
                    acc += pg
                else:
                    # first stored gradient may be a read-only view
                    local[key] = acc + pg
                    owned.add(key)
        for key, tensor in leaves.items():
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            tensor.grad += local[key]


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out, parents, grad_fn):
    tape = _active_tape()
    if tape is not None and not tape.frozen:
        out.graph_id = len(tape.nodes)
        out._tape = tape
        tape.nodes.append(_Node(out, parents, grad_fn))
    return out


def backward(loss):
    """Run the backward pass of the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ValueError("loss carries no tape; evaluate it under a recording Tape")
    loss._tape.backward(loss)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"{op}: dtypes {a.data.dtype} and {b.data.dtype} differ")


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def add(a, b):
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def subtract(a, b):
    _check_same_shape(a, b, "subtract")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def multiply(a, b):
    _check_same_shape(a, b, "multiply")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x, c):
    """Multiply by a non-learned python scalar."""
    c = float(c)
    out = Tensor(x.data * c)
    return _record(out, (x,), lambda g: (g * c,))


def sum_all(x):
    out = Tensor(x.data.sum())
    return _record(out, (x,), lambda g: (np.broadcast_to(g, x.data.shape),))


def sum_rows(x):
    """Sum a 2-D tensor over its second axis, giving one value per row."""
    if x.data.ndim != 2:
        raise DimensionError(f"sum_rows expects 2 dims, got shape {x.data.shape}")
    out = Tensor(x.data.sum(axis=1))
    return _record(out, (x,), lambda g: (np.broadcast_to(g[:, None], x.data.shape),))


def sqrt(x, grad_floor=0.0):
    """Elementwise square root.

    ``grad_floor`` clamps the radicand in the backward rule only, so a
    zero input keeps a zero forward value but yields a finite gradient.
    """
    if (x.data < 0).any():
        raise NumericError("sqrt: negative input")
    out = Tensor(np.sqrt(x.data))
    if grad_floor > 0.0:
        denom = 2.0 * np.sqrt(np.maximum(x.data, grad_floor))
    else:
        denom = 2.0 * out.data
    return _record(out, (x,), lambda g: (g / denom,))


def transpose(x):
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects 2 dims, got shape {x.data.shape}")
    out = Tensor(x.data.T.copy())
    return _record(out, (x,), lambda g: (g.T,))


def gather_rows(x, indices):
    """Select rows of a 2-D tensor; gradients scatter-add back."""
    if x.data.ndim != 2:
        raise DimensionError(f"gather_rows expects 2 dims, got shape {x.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or (idx < 0).any() or (idx >= x.data.shape[0]).any():
        raise DimensionError(
            f"gather_rows: indices out of range for {x.data.shape[0]} rows"
        )
    out = Tensor(x.data[idx])
    n_rows = x.data.shape[0]

    def grad_fn(g):
        # bincount per column beats np.add.at for these sizes
        gx = np.empty_like(x.data)
        for c in range(x.data.shape[1]):
            gx[:, c] = np.bincount(idx, weights=g[:, c], minlength=n_rows)
        return (gx,)

    return _record(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# network operations


def per_vertex_linear(x, weight, bias):
    """Shared linear map over the vertex axis: out[c,v] = W[c,:].x[:,v] + b[c].

    Equivalent to a kernel-1 stride-1 1D convolution along vertices.
    """
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"per_vertex_linear: x {x.data.shape}, weight {weight.data.shape}, "
            f"bias {bias.data.shape}"
        )
    c_out, c_in = weight.data.shape
    if x.data.shape[0] != c_in or bias.data.shape[0] != c_out:
        raise DimensionError(
            f"per_vertex_linear: weight {weight.data.shape} does not map "
            f"input {x.data.shape} with bias {bias.data.shape}"
        )
    prod = weight.data @ x.data
    prod += bias.data[:, None]
    out = Tensor(prod)

    def grad_fn(g):
        return (weight.data.T @ g, g @ x.data.T, g.sum(axis=1))

    return _record(out, (x, weight, bias), grad_fn)


def instance_norm(x, eps=1e-5):
    """Normalize each channel row to zero mean and (near-)unit variance.

    No learned affine terms; conditioning layers supply modulation.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"instance_norm expects 2 dims, got {x.data.shape}")
    if x.data.shape[1] < 2:
        raise DegenerateStatisticsError(
            f"instance_norm needs at least 2 vertices, got {x.data.shape[1]}"
        )
    mean = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered
    xhat *= inv
    out = Tensor(xhat)

    def grad_fn(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _record(out, (x,), grad_fn)


def softmax_over_keys(scores):
    """Row-wise softmax: each query row becomes a distribution over keys."""
    if scores.data.ndim != 2:
        raise DimensionError(f"softmax expects 2 dims, got {scores.data.shape}")
    if not np.isfinite(scores.data).all():
        raise NumericError("softmax_over_keys: non-finite scores")
    a = scores.data - scores.data.max(axis=1, keepdims=True)
    np.exp(a, out=a)
    a /= a.sum(axis=1, keepdims=True)
    out = Tensor(a)

    def grad_fn(g):
        return (a * (g - (g * a).sum(axis=1, keepdims=True)),)

    return _record(out, (scores,), grad_fn)


def batched_matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"batched_matmul: inner dims of {a.data.shape} and {b.data.shape} disagree"
        )
    out = Tensor(a.data @ b.data)

    def grad_fn(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record(out, (a, b), grad_fn)


def activation(x, kind):
    """Elementwise nonlinearity; relu takes subgradient 0 at the origin."""
    if kind == "relu":
        out = Tensor(np.maximum(x.data, 0))
        mask = x.data > 0
        return _record(out, (x,), lambda g: (g * mask,))
    if kind == "tanh":
        out = Tensor(np.tanh(x.data))
        return _record(out, (x,), lambda g: (g * (1.0 - out.data * out.data),))
    raise ValueError(f"unknown activation kind {kind!r}")


def scale_and_add(att_out, gamma, residual):
    """out = gamma * att_out + residual, with gamma a learned scalar."""
    _check_same_shape(att_out, residual, "scale_and_add")
    if gamma.data.shape != ():
        raise DimensionError(f"gamma must be a scalar, got shape {gamma.data.shape}")
    gval = float(gamma.data)
    if gval == 0.0:
        # Exact residual passthrough keeps signed zeros bit-identical.
        out = Tensor(residual.data.copy())
    else:
        out = Tensor(gval * att_out.data + residual.data)

    def grad_fn(g):
        return (g * gval, np.asarray((g * att_out.data).sum(), dtype=gamma.data.dtype), g)

    return _record(out, (att_out, gamma, residual), grad_fn)


def max_over_vertices(x, target_v):
    """Window-wise maxima shrinking the vertex axis to ``target_v`` columns.

    Window w spans columns [floor(w*V/target_v), floor((w+1)*V/target_v)).
    Gradients route to the first-index argmax of each window.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"max_over_vertices expects 2 dims, got {x.data.shape}")
    c, v = x.data.shape
    if target_v < 1 or v < target_v:
        raise DimensionError(
            f"max_over_vertices: cannot reduce {v} vertices to {target_v}"
        )
    bounds = [(w * v) // target_v for w in range(target_v + 1)]
    out_data = np.empty((c, target_v), dtype=x.data.dtype)
    argmax = np.empty((c, target_v), dtype=np.int64)
    for w in range(target_v):
        lo, hi = bounds[w], bounds[w + 1]
        block = x.data[:, lo:hi]
        arg = block.argmax(axis=1)
        argmax[:, w] = lo + arg
        out_data[:, w] = block[np.arange(c), arg]
    out = Tensor(out_data)
    rows = np.arange(c)[:, None]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, argmax), g)
        return (gx,)

    return _record(out, (x,), grad_fn)
