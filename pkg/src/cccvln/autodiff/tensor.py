"""Dense float64 tensors with a reverse-mode tape.

A :class:`Tape` records primitive operations in execution order, so a
reverse sweep over the record is already a valid topological order.  Tensors
built without a tape (or from inputs that need no gradient) are plain
constants and cost nothing beyond the numpy call.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives operands of non-conforming shapes."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class Tensor:
    __slots__ = ("value", "tape", "index", "name")

    def __init__(self, value, tape: "Tape | None" = None, index: int = -1, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable | None):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaf_names: dict[int, str] = {}
        self._bound: dict[int, dict[str, Tensor]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Tensor:
        t = Tensor(value, self, len(self.nodes), name)
        if name is not None:
            if name in self.leaf_names.values():
                raise ValueError(f"duplicate leaf name {name!r}")
            self.leaf_names[t.index] = name
        self.nodes.append(_Node("leaf", (), None))
        return t

    def record(self, op: str, value: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
        out = Tensor.__new__(Tensor)
        out.value = value
        out.tape = self
        out.index = len(self.nodes)
        out.name = None
        self.nodes.append(_Node(op, inputs, backward))
        return out

    def bind(self, store) -> dict[str, Tensor]:
        """Leaf tensors for every parameter of ``store`` (cached per store)."""
        key = id(store)
        bound = self._bound.get(key)
        if bound is None:
            bound = {name: self.leaf(arr, name) for name, arr in store.items()}
            self._bound[key] = bound
        return bound


def constant(value) -> Tensor:
    return Tensor(value)


def _tape_of(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = t.tape
    return tape


def _emit(op: str, value: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape.record(op, value, inputs, backward)


# -- primitives --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError("matmul", av.shape, bv.shape)
    out = av @ bv

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _emit("matmul", np.asarray(out, dtype=np.float64), (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError("add", a.value.shape, b.value.shape)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError("mul", a.value.shape, b.value.shape)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scalar_mul(a: Tensor, c: "float | Tensor") -> Tensor:
    """``a * c`` for a python float or a 0-d tensor ``c`` (differentiable in both)."""
    if isinstance(c, Tensor):
        if c.value.ndim != 0:
            raise ShapeError("scalar_mul", a.value.shape, c.value.shape)
        av, cv = a.value, float(c.value)
        return _emit("scalar_mul", av * cv, (a, c),
                     lambda g: (g * cv, np.asarray(np.sum(g * av))))
    c = float(c)
    return _emit("scalar_mul", a.value * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("add", a.value + c, (a,), lambda g: (g,))


def negate(a: Tensor) -> Tensor:
    return _emit("negate", -a.value, (a,), lambda g: (-g,))


def concat(ts: Sequence[Tensor]) -> Tensor:
    """Join 1-D tensors end to end."""
    for t in ts:
        if t.value.ndim != 1:
            raise ShapeError("concat", *(t.value.shape for t in ts))
    sizes = [t.value.shape[0] for t in ts]
    out = np.concatenate([t.value for t in ts])
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts))

    return _emit("concat", out, tuple(ts), backward)


def stack(ts: Sequence[Tensor]) -> Tensor:
    """Join equally shaped tensors along a new leading axis."""
    shape = ts[0].value.shape
    for t in ts:
        if t.value.shape != shape:
            raise ShapeError("concat", *(t.value.shape for t in ts))
    out = np.stack([t.value for t in ts])
    return _emit("concat", out, tuple(ts), lambda g: tuple(g))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.value))
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def log(a: Tensor) -> Tensor:
    av = a.value
    return _emit("log", np.log(av), (a,), lambda g: (g / av,))


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.value)
    return _emit("sqrt", r, (a,), lambda g: (g * 0.5 / r,))


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over a 1-D tensor.  Entries where ``mask`` is False get exactly 0."""
    x = a.value
    if x.ndim != 1:
        raise ShapeError("softmax", x.shape)
    if mask is not None:
        if mask.shape != x.shape:
            raise ShapeError("softmax", x.shape, mask.shape)
        if not mask.any():
            raise ValueError("softmax: mask excludes every entry")
        z = np.where(mask, x, -np.inf)
    else:
        z = x
    e = np.exp(z - z.max())
    p = e / e.sum()

    def backward(g):
        return (p * (g - np.dot(g, p)),)

    return _emit("softmax", p, (a,), backward)


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.value.shape
    return _emit("sum", np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def max_pool(a: Tensor) -> Tensor:
    """Max over the set axis (axis 0) of a (K, d) tensor; ties go to the first row."""
    x = a.value
    if x.ndim != 2:
        raise ShapeError("max_pool", x.shape)
    idx = x.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def backward(g):
        gx = np.zeros_like(x)
        gx[idx, cols] = g
        return (gx,)

    return _emit("max_pool", x[idx, cols], (a,), backward)


def lookup(table: Tensor, idx) -> Tensor:
    """Row gather along axis 0 (embedding lookup); works on vectors too."""
    tv = table.value
    out = tv[idx]
    if np.ndim(idx) == 0:
        if not -tv.shape[0] <= idx < tv.shape[0]:
            raise ShapeError("lookup", tv.shape, ())

        def backward(g):
            gt = np.zeros_like(tv)
            gt[idx] = g
            return (gt,)
    else:
        idx = np.asarray(idx)

        def backward(g):
            gt = np.zeros_like(tv)
            np.add.at(gt, idx, g)
            return (gt,)

    return _emit("lookup", np.array(out, dtype=np.float64), (table,), backward)


def slice_(a: Tensor, start: int, stop: int) -> Tensor:
    x = a.value
    if x.ndim != 1 or not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError("slice", x.shape)
    n = x.shape[0]

    def backward(g):
        gx = np.zeros(n)
        gx[start:stop] = g
        return (gx,)

    return _emit("slice", x[start:stop].copy(), (a,), backward)


def lstm_cell(w: Tensor, b: Tensor, x: Tensor, h: Tensor, c: Tensor) -> Tensor:
    """One LSTM step.  ``w`` is (4H, D+H), gate order input/forget/cell/output.

    Returns a (2, H) tensor whose rows are the new hidden and cell states.
    """
    hdim = h.value.shape[0]
    if (w.value.shape != (4 * hdim, x.value.shape[0] + hdim) or b.value.shape != (4 * hdim,)
            or c.value.shape != (hdim,)):
        raise ShapeError("lstm_cell", w.value.shape, b.value.shape, x.value.shape, h.value.shape, c.value.shape)
    xh = np.concatenate([x.value, h.value])
    z = w.value @ xh + b.value
    s = 1.0 / (1.0 + np.exp(-z[: 2 * hdim]))
    i, f = s[:hdim], s[hdim:]
    gg = np.tanh(z[2 * hdim: 3 * hdim])
    o = 1.0 / (1.0 + np.exp(-z[3 * hdim:]))
    cv = c.value
    c_new = f * cv + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    dx = x.value.shape[0]

    def backward(g):
        gh, gc = g[0], g[1]
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * cv * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            do * o * (1.0 - o),
        ])
        dxh = w.value.T @ dz
        return np.outer(dz, xh), dz, dxh[:dx], dxh[dx:], dc * f

    return _emit("lstm_cell", np.stack([h_new, c_new]), (w, b, x, h, c), backward)


def stop_gradient(a: Tensor) -> Tensor:
    """Same value, cut from the tape."""
    return Tensor(a.value)


# -- reverse sweep -----------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every named leaf it reaches."""
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    grads: dict[str, np.ndarray] = {}
    if loss.tape is None:
        return grads
    if loss.tape is not tape:
        raise ValueError("backward: loss was recorded on another tape")
    nodes = tape.nodes
    acc: list = [None] * (loss.index + 1)
    acc[loss.index] = np.ones_like(loss.value)
    leaves: list[int] = []
    for i in range(loss.index, -1, -1):
        g = acc[i]
        if g is None:
            continue
        node = nodes[i]
        if node.backward is None:
            leaves.append(i)
            continue
        acc[i] = None
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp.tape is None:
                continue
            j = inp.index
            prev = acc[j]
            acc[j] = gi if prev is None else prev + gi
    for i in leaves:
        name = tape.leaf_names.get(i)
        if name is not None:
            grads[name] = acc[i]
    return grads
