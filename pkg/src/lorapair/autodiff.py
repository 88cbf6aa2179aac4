"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (entered with
``with Tape() as tape:``) whenever one of their inputs requires a gradient.
``backward(loss, tape)`` then walks the recorded nodes in reverse.

There is no broadcasting: binary ops demand equal shapes, and bias addition
is its own op.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError, ValidationError

DTYPE = np.float64


class Tensor:
    """Shape-tagged real array.

    ``data`` holds the values as an ndarray of ``shape``; ``values`` gives the
    flat row-major view the rest of the world sometimes wants.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name", "__weakref__")

    def __init__(self, values, shape=None, requires_grad=False, name=None):
        data = np.array(values, dtype=DTYPE)
        if shape is not None:
            data = data.reshape(tuple(shape))
        if any(s <= 0 for s in data.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {data.shape}")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None
        self.name = name

    @classmethod
    def _wrap(cls, data):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def values(self):
        return self.data.ravel().copy()

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable


_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of the operations of one forward pass.

    Build a fresh tape per forward pass. A tape belongs to one thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def owns(self, t: Tensor) -> bool:
        i = t.node_id
        return i is not None and i < len(self.nodes) and self.nodes[i].output is t

    def record(self, op, inputs, output, vjp):
        output.node_id = len(self.nodes)
        output.requires_grad = True
        self.nodes.append(Node(op, tuple(inputs), output, vjp))
        return output

    def backward(self, loss, wrt=None):
        return backward(loss, self, wrt)


def _emit(op, inputs, data, vjp):
    out = Tensor._wrap(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, vjp)
    return out


def backward(loss: Tensor, tape: Tape, wrt: Sequence[Tensor] | None = None) -> dict:
    """Populate ``.grad`` on every leaf that requires a gradient.

    Leaves are tensors with ``requires_grad`` that feed the tape without being
    produced by it. Anything listed in ``wrt`` but unreachable from ``loss``
    gets a zero gradient. Returns ``{tensor: grad}`` for leaves and ``wrt``.
    Running it twice on the same tape gives bitwise-identical results.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ContractError("loss was not produced by this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes[: loss.node_id + 1]):
        for inp in node.inputs:
            if inp.requires_grad and not tape.owns(inp):
                leaves[id(inp)] = inp
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
    for node in tape.nodes[loss.node_id + 1 :]:
        for inp in node.inputs:
            if inp.requires_grad and not tape.owns(inp):
                leaves.setdefault(id(inp), inp)
    if wrt is not None:
        for t in wrt:
            leaves.setdefault(id(t), t)

    result = {}
    for key, t in leaves.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
        result[t] = t.grad
    return result


# --- elementwise -----------------------------------------------------------


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


_UNARY = {"relu": relu, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    if op in _BINARY:
        if b is None:
            raise ValidationError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ValidationError(f"{op} takes one operand")
        return _UNARY[op](a)
    raise ValidationError(f"unknown elementwise op {op!r}")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


# --- linear algebra and shape ops ------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"reshape: {a.shape} has {a.size} values, {shape} needs {math.prod(shape)}")
    old = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape).copy(), lambda g: (g.reshape(old),))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[m×n] plus bias[n] on every row."""
    if x.data.ndim != 2 or bias.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit rows of {x.shape}")
    return _emit("add_bias", (x, bias), x.data + bias.data, lambda g: (g, g.sum(axis=0)))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), np.array(a.data.sum()), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _emit("mean", (a,), np.array(a.data.mean()), lambda g: (np.full(shape, float(g) / n),))


def gather_rows(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2 or ids.ndim != 1 or ids.size == 0:
        raise ShapeError(f"gather_rows: table {table.shape}, ids shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ValidationError(f"gather_rows: ids must lie in [0, {table.shape[0]})")
    shape = table.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return _emit("gather_rows", (table,), table.data[ids], vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: row counts differ: {[p.shape for p in parts]}")
    edges = np.cumsum([p.shape[1] for p in parts])[:-1]
    return _emit(
        "concat_cols",
        tuple(parts),
        np.concatenate([p.data for p in parts], axis=1),
        lambda g: tuple(np.split(g, edges, axis=1)),
    )


# --- nonlinear blocks --------------------------------------------------------


def _softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows needs a matrix, got {a.shape}")
    s = _softmax(a.data)
    return _emit("softmax_rows", (a,), s, lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-softmax logits."""
    labels = np.asarray(labels)
    m = logits.shape[0]
    if logits.data.ndim != 2 or labels.shape != (m,):
        raise ValidationError(f"cross_entropy_loss: {m} logit rows but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    x = logits.data
    top = x.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(x - top).sum(axis=1))
    rows = np.arange(m)
    loss = np.mean(lse - x[rows, labels])

    def vjp(g):
        d = _softmax(x)
        d[rows, labels] -= 1.0
        return (d * (float(g) / m),)

    return _emit("cross_entropy", (logits,), np.array(loss), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean / unit variance, then scale and shift."""
    n = x.shape[1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs rows of {x.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def vjp(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit("layer_norm", (x, gain, bias), xhat * gd + bias.data, vjp)


def segment_attention(q: Tensor, k: Tensor, v: Tensor, segments, num_heads: int) -> Tensor:
    """Multi-head scaled dot-product attention restricted to equal segment ids.

    Rows of q/k/v are tokens; a token attends only to tokens with the same
    entry in ``segments``. Segments are packed into a padded
    (segments, heads, len, len) block so a batch of variable-length sequences
    costs one batched matmul rather than one huge masked square.
    """
    T, d = q.shape
    if k.shape != (T, d) or v.shape != (T, d):
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if d % num_heads:
        raise ShapeError(f"attention: width {d} not divisible by {num_heads} heads")
    seg = np.asarray(segments)
    if seg.shape != (T,):
        raise ShapeError(f"attention: {seg.shape[0]} segment ids for {T} rows")
    H, dh = num_heads, d // num_heads
    c = 1.0 / math.sqrt(dh)

    _, inv = np.unique(seg, return_inverse=True)
    counts = np.bincount(inv)
    G, L = counts.size, int(counts.max())
    order = np.argsort(inv, kind="stable")
    slot = np.empty(T, dtype=np.int64)
    slot[order] = np.arange(T) - np.repeat(np.cumsum(counts) - counts, counts)
    valid = np.zeros((G, L), dtype=bool)
    valid[inv, slot] = True

    def pack(a):
        out = np.zeros((G, L, d))
        out[inv, slot] = a
        return out.reshape(G, L, H, dh).transpose(0, 2, 1, 3)

    def unpack(a):
        return a.transpose(0, 2, 1, 3).reshape(G, L, d)[inv, slot]

    Q, K, V = pack(q.data), pack(k.data), pack(v.data)
    KT = K.transpose(0, 1, 3, 2)
    P = _softmax(np.where(valid[:, None, None, :], (Q @ KT) * c, -np.inf))
    out = unpack(P @ V)

    def vjp(g):
        Gp = pack(g)
        dV = P.transpose(0, 1, 3, 2) @ Gp
        dP = Gp @ V.transpose(0, 1, 3, 2)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * c
        return unpack(dS @ K), unpack(dS.transpose(0, 1, 3, 2) @ Q), unpack(dV)

    return _emit("attention", (q, k, v), out, vjp)


# --- gradient oracle ---------------------------------------------------------


def finite_diff_grad(f: Callable, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if not h > 0:
        raise ValidationError("finite difference step must be positive")
    base = x.data.astype(DTYPE).ravel()
    out = np.empty_like(base)

    def at(vec):
        r = f(Tensor(vec.reshape(x.shape)))
        return r.item() if isinstance(r, Tensor) else float(r)

    for i in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[i] += h
        minus[i] -= h
        out[i] = (at(plus) - at(minus)) / (2.0 * h)
    return Tensor(out.reshape(x.shape))
