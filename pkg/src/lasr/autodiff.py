"""Dense-array reverse-mode differentiation.

A :class:`Graph` records every primitive applied to its tensors in
topological order; :func:`backward` walks that record in reverse and
accumulates gradients into the leaves.  Everything is float64.

Typical use::

    g = Graph()
    w = g.leaf(np.ones((3, 2)), "w")
    loss = ad.sum(ad.tanh(x @ w))
    grads = backward(g, loss)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Graph", "Tensor", "ShapeError", "NonFiniteError", "GraphError",
    "backward", "grad_check", "GradCheckReport", "apply",
    "add", "sub", "mul", "neg", "scale", "matmul", "einsum", "tanh", "sigmoid",
    "exp", "log", "softmax", "log_softmax", "concat", "stack", "getitem",
    "reshape", "transpose", "sum", "mean", "embed", "conv1d", "layer_norm",
    "dropout", "lstm_cell",
]


class ShapeError(ValueError):
    """Operands of a primitive have non-conforming shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, index=None):
        self.op = op
        self.index = index
        where = f" at {index}" if index is not None else ""
        super().__init__(f"{op}: produced non-finite value{where}")


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "graph", "node", "requires_grad", "name")
    __array_ufunc__ = None  # make ndarray-op-Tensor defer to Tensor's reflected ops

    def __init__(self, value, graph: "Graph", requires_grad=False, name=None):
        self.value = value
        self.graph = graph
        self.requires_grad = requires_grad
        self.grad = None
        self.node = -1
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


@dataclass
class _Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Optional[Callable]


class Graph:
    """Ordered record of primitive applications.

    With ``record=False`` values are computed but nothing is stored, which is
    what inference and finite-difference probing use.
    """

    def __init__(self, record: bool = True, check_finite: bool = True):
        self.record = record
        self.check_finite = check_finite
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []
        self._done = False

    def leaf(self, value, name=None) -> Tensor:
        arr = np.array(value, dtype=np.float64)
        arr.flags.writeable = False
        t = Tensor(arr, self, requires_grad=True, name=name)
        self.leaves.append(t)
        if self.record:
            t.node = len(self.nodes)
            self.nodes.append(_Node("leaf", (), t, None))
        return t

    def constant(self, value) -> Tensor:
        arr = np.asarray(value, dtype=np.float64)
        return Tensor(arr, self, requires_grad=False)

    def reset(self):
        """Clear gradients so :func:`backward` may run again on this graph."""
        for leaf in self.leaves:
            leaf.grad = None
        self._done = False


def _graph_of(args) -> Graph:
    for a in args:
        if isinstance(a, Tensor):
            return a.graph
    raise GraphError("operation needs at least one Tensor operand")


def _wrap(x, graph: Graph) -> Tensor:
    if isinstance(x, Tensor):
        if x.graph is not graph:
            raise GraphError("operands belong to different graphs")
        return x
    return graph.constant(x)


def apply(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Register a primitive result.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    This is also the hook for user-defined primitives.
    """
    graph = inputs[0].graph
    value = np.asarray(value, dtype=np.float64)
    if graph.check_finite and not np.isfinite(value).all():
        bad = np.argwhere(~np.isfinite(value))
        raise NonFiniteError(op, tuple(int(i) for i in bad[0]) if bad.size else None)
    value.flags.writeable = False
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, graph, requires_grad=needs)
    if graph.record and needs:
        out.node = len(graph.nodes)
        graph.nodes.append(_Node(op, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    nlead = grad.ndim - len(shape)
    if nlead:
        grad = grad.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    g = _graph_of((a, b))
    a, b = _wrap(a, g), _wrap(b, g)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return apply("add", a.value + b.value, (a, b),
                 lambda go: (_unbroadcast(go, sa), _unbroadcast(go, sb)))


def sub(a, b) -> Tensor:
    g = _graph_of((a, b))
    a, b = _wrap(a, g), _wrap(b, g)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return apply("sub", a.value - b.value, (a, b),
                 lambda go: (_unbroadcast(go, sa), _unbroadcast(-go, sb)))


def mul(a, b) -> Tensor:
    g = _graph_of((a, b))
    a, b = _wrap(a, g), _wrap(b, g)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return apply("mul", av * bv, (a, b),
                 lambda go: (_unbroadcast(go * bv, av.shape), _unbroadcast(go * av, bv.shape)))


def neg(a: Tensor) -> Tensor:
    return apply("neg", -a.value, (a,), lambda go: (-go,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply("scale", a.value * c, (a,), lambda go: (go * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return apply("tanh", y, (a,), lambda go: (go * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return apply("sigmoid", y, (a,), lambda go: (go * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return apply("exp", y, (a,), lambda go: (go * y,))


def log(a: Tensor) -> Tensor:
    x = a.value
    return apply("log", np.log(x), (a,), lambda go: (go / x,))


# ------------------------------------------------------------------ softmaxes

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.value
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(go):
        return (y * (go - (go * y).sum(axis=axis, keepdims=True)),)
    return apply("softmax", y, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.value
    z = x - x.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(go):
        return (go - np.exp(y) * go.sum(axis=axis, keepdims=True),)
    return apply("log_softmax", y, (a,), bw)


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., k) and ``b`` of shape (k, m), or
    matching batch dimensions on both sides."""
    g = _graph_of((a, b))
    a, b = _wrap(a, g), _wrap(b, g)
    av, bv = a.value, b.value
    if av.ndim < 1 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError("matmul", av.shape, bv.shape)
    if bv.ndim == 2:
        def bw(go):
            ga = go @ bv.T
            a2 = av.reshape(-1, av.shape[-1])
            gb = a2.T @ go.reshape(-1, go.shape[-1])
            return ga, gb
        return apply("matmul", av @ bv, (a, b), bw)
    if av.shape[:-2] != bv.shape[:-2]:
        raise ShapeError("matmul", av.shape, bv.shape)

    def bwb(go):
        return go @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ go
    return apply("matmul", av @ bv, (a, b), bwb)


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum.  Every index of an operand must appear in the
    other operand or in the output."""
    g = _graph_of((a, b))
    a, b = _wrap(a, g), _wrap(b, g)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if any(ch not in other and ch not in out for ch in s):
            raise ValueError(f"einsum: index summed only within one operand in {subscripts!r}")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ShapeError("einsum", a.shape, b.shape)
    try:
        y = np.einsum(subscripts, a.value, b.value, optimize=False)
    except ValueError:
        raise ShapeError("einsum", a.shape, b.shape) from None
    av, bv = a.value, b.value

    def bw(go):
        ga = np.einsum(f"{out},{sb}->{sa}", go, bv) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", go, av) if b.requires_grad else None
        return ga, gb
    return apply("einsum", y, (a, b), bw)


# ----------------------------------------------------------- shape plumbing

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    g = _graph_of(tensors)
    ts = [_wrap(t, g) for t in tensors]
    try:
        y = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(go):
        return tuple(np.split(go, sizes, axis=axis))
    return apply("concat", y, ts, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    g = _graph_of(tensors)
    ts = [_wrap(t, g) for t in tensors]
    try:
        y = np.stack([t.value for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in ts]) from None

    def bw(go):
        return tuple(np.moveaxis(go, axis, 0))
    return apply("stack", y, ts, bw)


def getitem(a: Tensor, idx) -> Tensor:
    y = np.array(a.value[idx])
    shape = a.shape

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(go):
        ga = np.zeros(shape)
        if fancy:
            np.add.at(ga, idx, go)
        else:
            ga[idx] = go
        return (ga,)
    return apply("getitem", y, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        y = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, shape) from None
    return apply("reshape", y, (a,), lambda go: (go.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply("transpose", a.value.transpose(axes), (a,), lambda go: (go.transpose(inv),))


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    shape = a.shape

    def bw(go):
        if axis is not None and not keepdims:
            go = np.expand_dims(go, axis)
        return (np.broadcast_to(go, shape).copy(),)
    return apply("sum", np.asarray(a.value.sum(axis=axis, keepdims=keepdims), dtype=np.float64),
                 (a,), bw)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise ShapeError("embed", table.shape, ids.shape)
    rows = table.shape

    def bw(go):
        ga = np.zeros(rows)
        np.add.at(ga, ids, go)
        return (ga,)
    return apply("embed", table.value[ids], (table,), bw)


# ------------------------------------------------------------ network layers

def conv1d(x: Tensor, filters: Tensor) -> Tensor:
    """Same-padded 1-D correlation over the last axis.

    x: (..., U), filters: (C, W) with W odd  ->  (..., U, C)
    """
    g = _graph_of((x, filters))
    x, filters = _wrap(x, g), _wrap(filters, g)
    C, W = filters.shape
    if filters.ndim != 2 or W % 2 != 1:
        raise ShapeError("conv1d", x.shape, filters.shape)
    U = x.shape[-1]
    half = W // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(half, half)]
    xp = np.pad(x.value, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, W, axis=-1)  # (..., U, W)
    fv = filters.value
    y = win @ fv.T

    def bw(go):
        gf = go.reshape(-1, C).T @ win.reshape(-1, W) if filters.requires_grad else None
        gx = None
        if x.requires_grad:
            gwin = go @ fv  # (..., U, W)
            gxp = np.zeros(xp.shape)
            for k in range(W):
                gxp[..., k:k + U] += gwin[..., k]
            gx = gxp[..., half:half + U]
        return gx, gf
    return apply("conv1d", y, (x, filters), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then ``gain * xhat + bias``."""
    g = _graph_of((x, gain, bias))
    x, gain, bias = _wrap(x, g), _wrap(gain, g), _wrap(bias, g)
    D = x.shape[-1]
    if gain.shape != (D,) or bias.shape != (D,):
        raise ShapeError("layer_norm", x.shape, gain.shape)
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.value

    def bw(go):
        gxhat = go * gv
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(go.ndim - 1))
        return gx, (go * xhat).sum(axis=lead), go.sum(axis=lead)
    return apply("layer_norm", xhat * gv + bias.value, (x, gain, bias), bw)


def dropout(x: Tensor, keep_prob: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout.  ``keep_prob == 1`` (or no rng) is the identity."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0 or rng is None:
        return x
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    return apply("dropout", x.value * mask, (x,), lambda go: (go * mask,))


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell(gx: Tensor, hc: Tensor, Wh: Tensor, mask=None) -> Tensor:
    """One fused LSTM step.

    gx: (B, 4H) input projection with bias, gates ordered [i, f, o, g];
    hc: (B, 2H) previous ``[h, c]``; Wh: (H, 4H).  Rows whose ``mask`` is 0
    carry the previous state through unchanged.  Returns the new ``[h, c]``.
    """
    g = _graph_of((gx, hc, Wh))
    gx, hc, Wh = _wrap(gx, g), _wrap(hc, g), _wrap(Wh, g)
    B, H2 = hc.shape
    H = H2 // 2
    if gx.shape != (B, 4 * H) or Wh.shape != (H, 4 * H):
        raise ShapeError("lstm_cell", gx.shape, hc.shape, Wh.shape)
    h, c = hc.value[:, :H], hc.value[:, H:]
    W = Wh.value
    z = gx.value + h @ W
    ifo = _sig(z[:, :3 * H])
    i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
    gg = np.tanh(z[:, 3 * H:])
    c_new = f * c + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(B, 1)
        out = np.concatenate([m * h_new + (1 - m) * h, m * c_new + (1 - m) * c], axis=1)
    else:
        m = None
        out = np.concatenate([h_new, c_new], axis=1)

    def bw(go):
        gh, gc = go[:, :H], go[:, H:]
        if m is not None:
            gh_keep, gc_keep = (1 - m) * gh, (1 - m) * gc
            gh, gc = m * gh, m * gc
        gcn = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gcn * gg * i * (1 - i),
            gcn * c * f * (1 - f),
            gh * tc * o * (1 - o),
            gcn * i * (1 - gg * gg),
        ], axis=1)
        gh_prev = dz @ W.T
        gc_prev = gcn * f
        if m is not None:
            gh_prev = gh_prev + gh_keep
            gc_prev = gc_prev + gc_keep
        return dz, np.concatenate([gh_prev, gc_prev], axis=1), h.T @ dz
    return apply("lstm_cell", out, (gx, hc, Wh), bw)


# ------------------------------------------------------------------ backward

def backward(graph: Graph, loss: Tensor) -> dict:
    """Populate ``leaf.grad`` for every leaf of ``graph``.

    Returns a dict keyed by leaf name (or node id for unnamed leaves).
    """
    if loss.graph is not graph:
        raise GraphError("loss tensor does not belong to this graph")
    if loss.value.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not graph.record:
        raise GraphError("graph was built with record=False")
    if graph._done:
        raise GraphError("backward already ran on this graph; call graph.reset() first")
    graph._done = True
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[loss.node] = np.ones(loss.shape)
    for idx in range(loss.node, -1, -1):
        node = graph.nodes[idx]
        go = grads.pop(idx, None)
        if go is None:
            continue
        if node.backward is None:
            node.output.grad = go
            continue
        gins = node.backward(go)
        for inp, gi in zip(node.inputs, gins):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node in grads:
                grads[inp.node] = grads[inp.node] + gi
            else:
                grads[inp.node] = gi
    out = {}
    for leaf in graph.leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros(leaf.shape)
        out[leaf.name if leaf.name is not None else leaf.node] = leaf.grad
    return out


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-4
    failure: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(e < self.tol for e in self.errors.values())

    def __str__(self):
        lines = [f"{k}: {v:.3e}" for k, v in self.errors.items()]
        if self.failure:
            lines.append(f"failure: {self.failure}")
        return "\n".join(lines)


def _rel_error(a: np.ndarray, n: np.ndarray) -> float:
    # max-norm relative error; leaves whose gradient is ~0 everywhere compare absolutely
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    diff = np.abs(a - n).max(initial=0.0)
    return diff / denom if denom > 1e-8 else diff


def grad_check(f, leaves: dict, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f`` with central differences.

    ``f(graph, tensors)`` builds the scalar loss from the leaf tensors
    (a dict keyed like ``leaves``).  It must be deterministic.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaves = {k: np.array(v, dtype=np.float64) for k, v in leaves.items()}
    report = GradCheckReport(tol=tol)

    g = Graph()
    ts = {k: g.leaf(v, k) for k, v in leaves.items()}
    try:
        loss = f(g, ts)
    except NonFiniteError as e:
        report.failure = f"non-finite value at base point in {e.op}"
        return report
    backward(g, loss)
    analytic = {k: ts[k].grad for k in leaves}

    def probe(name, vals):
        pg = Graph(record=False)
        pts = {k: pg.leaf(vals[k] if k == name else leaves[k], k) for k in leaves}
        return float(f(pg, pts).value)

    for name, base in leaves.items():
        num = np.zeros_like(base)
        for i in np.ndindex(base.shape):
            vals = {name: base.copy()}
            vals[name][i] = base[i] + step
            try:
                fp = probe(name, vals)
                vals[name][i] = base[i] - step
                fm = probe(name, vals)
            except NonFiniteError:
                report.failure = f"non-finite value probing {name}{list(i)}"
                return report
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.failure = f"non-finite value probing {name}{list(i)}"
                return report
            num[i] = (fp - fm) / (2 * step)
        report.errors[name] = _rel_error(analytic[name], num)
    return report
