"""Minimal reverse-mode differentiation over dense float64 arrays.

A Tape is a declared computation over named parameters: build it once with
the primitive ops below, then call ``forward(params)`` to evaluate and
``backward()`` to accumulate exact gradients for every parameter. Because
the tape is re-executable, central finite differences can re-run the same
program with perturbed inputs (``finite_diff_check``).

The primitive set is deliberately small: add, mul, matmul, gather, tanh,
softmax, log, sum, scale, sqrt, norm, stack. That closed set covers a tanh
encoder-decoder and all three loss functions built on top of it.

Everything is float64. Desk scale makes speed irrelevant and the
verification tolerances (1e-6 and below) are infeasible in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, StateError

__all__ = [
    "real_array",
    "ParamSet",
    "Node",
    "Tape",
    "finite_diff_check",
]


def real_array(values, shape=None) -> np.ndarray:
    """Validated float64 array: finite everywhere, optionally reshaped.

    Rejects NaN/Inf at construction; reshape failures surface as ShapeError.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        try:
            arr = arr.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot view {arr.size} values as shape {tuple(shape)}") from exc
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values rejected at construction")
    return arr


class ParamSet:
    """Named parameter snapshot. Treated as immutable once constructed."""

    def __init__(self, arrays: dict):
        self._arrays = {}
        for name, values in arrays.items():
            self._arrays[str(name)] = real_array(values)

    @property
    def names(self) -> tuple:
        return tuple(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name) -> bool:
        return name in self._arrays

    def items(self):
        return self._arrays.items()

    def shapes(self) -> dict:
        return {name: arr.shape for name, arr in self._arrays.items()}

    def total_size(self) -> int:
        return sum(arr.size for arr in self._arrays.values())

    def diff_norm(self, other: "ParamSet") -> float:
        """Global L2 norm of the elementwise difference."""
        if self.shapes() != other.shapes():
            raise ShapeError("parameter sets have different shapes")
        sq = 0.0
        for name, arr in self._arrays.items():
            d = arr - other[name]
            sq += float(np.dot(d.ravel(), d.ravel()))
        return float(np.sqrt(sq))

    def allclose(self, other: "ParamSet", atol=0.0, rtol=0.0) -> bool:
        if self.shapes() != other.shapes():
            return False
        return all(
            np.allclose(arr, other[name], atol=atol, rtol=rtol)
            for name, arr in self._arrays.items()
        )


@dataclass(frozen=True)
class Node:
    """Handle into a tape. ``meta`` carries static data (ids, axis, constants)."""

    idx: int
    op: str
    inputs: tuple
    shape: tuple
    meta: dict = field(default_factory=dict, compare=False)


class Tape:
    """Single-owner computation record; the last appended node is the output."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_nodes: dict[str, Node] = {}
        self._values: list | None = None
        self._grads: list | None = None

    # -- construction ------------------------------------------------------

    def _append(self, op, inputs, shape, meta=None) -> Node:
        node = Node(len(self.nodes), op, tuple(n.idx for n in inputs), tuple(shape), meta or {})
        self.nodes.append(node)
        self._values = None
        self._grads = None
        return node

    def param(self, name: str, shape) -> Node:
        """Declare a named leaf bound to a ParamSet entry at forward time."""
        if name in self._param_nodes:
            raise ShapeError(f"parameter {name!r} declared twice on this tape")
        node = self._append("param", (), tuple(shape), {"name": name})
        self._param_nodes[name] = node
        return node

    def constant(self, values) -> Node:
        arr = real_array(values)
        return self._append("const", (), arr.shape, {"value": arr})

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
        return self._append("add", (a, b), a.shape)

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
        return self._append("mul", (a, b), a.shape)

    def matmul(self, a: Node, b: Node) -> Node:
        """1-D/2-D matrix product; the only broadcasting in the primitive set."""
        ash, bsh = a.shape, b.shape
        if len(ash) == 1 and len(bsh) == 1:
            if ash != bsh:
                raise ShapeError(f"dot length mismatch: {ash} vs {bsh}")
            out = ()
        elif len(ash) == 1 and len(bsh) == 2:
            if ash[0] != bsh[0]:
                raise ShapeError(f"matmul inner dims differ: {ash} vs {bsh}")
            out = (bsh[1],)
        elif len(ash) == 2 and len(bsh) == 1:
            if ash[1] != bsh[0]:
                raise ShapeError(f"matmul inner dims differ: {ash} vs {bsh}")
            out = (ash[0],)
        elif len(ash) == 2 and len(bsh) == 2:
            if ash[1] != bsh[0]:
                raise ShapeError(f"matmul inner dims differ: {ash} vs {bsh}")
            out = (ash[0], bsh[1])
        else:
            raise ShapeError(f"matmul supports 1-D/2-D only, got {ash} @ {bsh}")
        return self._append("matmul", (a, b), out)

    def gather(self, table: Node, ids) -> Node:
        """Embedding row lookup. An int id yields a vector, a tuple a matrix."""
        if len(table.shape) != 2:
            raise ShapeError(f"gather table must be 2-D, got {table.shape}")
        if isinstance(ids, (int, np.integer)):
            key, out = int(ids), (table.shape[1],)
            if not 0 <= key < table.shape[0]:
                raise ShapeError(f"gather id {key} out of range for table {table.shape}")
        else:
            key = tuple(int(i) for i in ids)
            if any(not 0 <= i < table.shape[0] for i in key):
                raise ShapeError(f"gather ids out of range for table {table.shape}")
            out = (len(key), table.shape[1])
        return self._append("gather", (table,), out, {"ids": key})

    def tanh(self, a: Node) -> Node:
        return self._append("tanh", (a,), a.shape)

    def softmax(self, a: Node) -> Node:
        """Row-wise softmax; a 1-D input is a single row."""
        if len(a.shape) not in (1, 2):
            raise ShapeError(f"softmax expects 1-D or 2-D, got {a.shape}")
        return self._append("softmax", (a,), a.shape)

    def log(self, a: Node, floor: float = 0.0) -> Node:
        """Elementwise log. With floor > 0, inputs are clamped below at floor
        and the gradient saturates at 1/floor (pass-through, not zeroed)."""
        if floor < 0:
            raise ShapeError("log floor must be >= 0")
        return self._append("log", (a,), a.shape, {"floor": float(floor)})

    def sum(self, a: Node, axis=None) -> Node:
        if axis is None:
            out = ()
        else:
            axis = int(axis)
            if not 0 <= axis < len(a.shape):
                raise ShapeError(f"sum axis {axis} invalid for shape {a.shape}")
            out = tuple(s for i, s in enumerate(a.shape) if i != axis)
        return self._append("sum", (a,), out, {"axis": axis})

    def scale(self, a: Node, c: float) -> Node:
        return self._append("scale", (a,), a.shape, {"c": float(c)})

    def sqrt(self, a: Node, floor: float = 0.0) -> Node:
        """Elementwise sqrt. With floor > 0 the input is clamped below at
        floor, capping the 1/(2*sqrt) backward factor."""
        if floor < 0:
            raise ShapeError("sqrt floor must be >= 0")
        return self._append("sqrt", (a,), a.shape, {"floor": float(floor)})

    def norm(self, a: Node) -> Node:
        """L2 norm of the whole array, as a scalar."""
        return self._append("norm", (a,), ())

    def stack(self, rows) -> Node:
        """Stack equal-length 1-D nodes as the rows of a new matrix."""
        rows = tuple(rows)
        if not rows:
            raise ShapeError("stack needs at least one row")
        width = rows[0].shape
        if len(width) != 1 or any(r.shape != width for r in rows):
            raise ShapeError("stack expects equal-length 1-D nodes")
        return self._append("stack", rows, (len(rows), width[0]))

    # -- execution ---------------------------------------------------------

    @property
    def output(self) -> Node:
        if not self.nodes:
            raise StateError("empty tape has no output")
        return self.nodes[-1]

    def forward(self, params: ParamSet) -> np.ndarray:
        """Evaluate every node in order; returns the output node's value."""
        for name, node in self._param_nodes.items():
            if name not in params:
                raise ShapeError(f"parameter {name!r} missing from ParamSet")
            if params[name].shape != node.shape:
                raise ShapeError(
                    f"parameter {name!r} shape {params[name].shape} != declared {node.shape}"
                )
        values = []
        for node in self.nodes:
            val = _FORWARD[node.op](node, values, params)
            if not np.all(np.isfinite(val)):
                raise NumericError(f"non-finite value at node {node.idx} ({node.op})")
            values.append(val)
        self._values = values
        self._grads = None
        return values[-1]

    def value(self, node: Node) -> np.ndarray:
        if self._values is None:
            raise StateError("forward has not been run")
        return self._values[node.idx]

    def backward(self) -> ParamSet:
        """Accumulate gradients of the scalar output w.r.t. every parameter.

        Accumulation order is the fixed reverse program order, so repeated
        runs are bit-identical.
        """
        if self._values is None:
            raise StateError("backward before forward")
        out = self.nodes[-1]
        if self._values[out.idx].shape != ():
            raise ShapeError(f"backward needs a scalar output, got {self._values[out.idx].shape}")
        grads: list = [None] * len(self.nodes)
        grads[out.idx] = np.array(1.0)
        for node in reversed(self.nodes):
            g = grads[node.idx]
            if g is None or node.op in ("param", "const"):
                continue
            _BACKWARD[node.op](node, g, self._values, grads)
        self._grads = grads
        out_grads = {}
        for name, node in self._param_nodes.items():
            g = grads[node.idx]
            out_grads[name] = np.zeros(node.shape) if g is None else g
        return ParamSet(out_grads)

    def grad(self, node: Node) -> np.ndarray:
        if self._grads is None:
            raise StateError("backward has not been run")
        g = self._grads[node.idx]
        return np.zeros(node.shape) if g is None else g


def _accum(grads, idx, delta, shape):
    if grads[idx] is None:
        grads[idx] = np.zeros(shape)
    grads[idx] = grads[idx] + delta


# Forward rules. Each takes (node, values-so-far, params) and returns ndarray.

def _fw_param(node, values, params):
    return params[node.meta["name"]]


def _fw_softmax(node, values, params):
    x = values[node.inputs[0]]
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _fw_log(node, values, params):
    x = values[node.inputs[0]]
    floor = node.meta["floor"]
    if floor == 0.0 and np.any(x <= 0):
        raise NumericError(f"log of non-positive value at node {node.idx}")
    return np.log(np.maximum(x, floor) if floor > 0 else x)


def _fw_sqrt(node, values, params):
    x = values[node.inputs[0]]
    floor = node.meta["floor"]
    if floor == 0.0 and np.any(x < 0):
        raise NumericError(f"sqrt of negative value at node {node.idx}")
    return np.sqrt(np.maximum(x, floor) if floor > 0 else x)


_FORWARD = {
    "param": _fw_param,
    "const": lambda n, v, p: n.meta["value"],
    "add": lambda n, v, p: v[n.inputs[0]] + v[n.inputs[1]],
    "mul": lambda n, v, p: v[n.inputs[0]] * v[n.inputs[1]],
    "matmul": lambda n, v, p: v[n.inputs[0]] @ v[n.inputs[1]],
    "gather": lambda n, v, p: v[n.inputs[0]][n.meta["ids"],],
    "tanh": lambda n, v, p: np.tanh(v[n.inputs[0]]),
    "softmax": _fw_softmax,
    "log": _fw_log,
    "sum": lambda n, v, p: np.sum(v[n.inputs[0]], axis=n.meta["axis"]),
    "scale": lambda n, v, p: v[n.inputs[0]] * n.meta["c"],
    "sqrt": _fw_sqrt,
    "norm": lambda n, v, p: np.array(np.linalg.norm(v[n.inputs[0]])),
    "stack": lambda n, v, p: np.stack([v[i] for i in n.inputs]),
}


# Backward rules. Each takes (node, upstream grad, values, grads) and
# accumulates into grads[input].

def _bw_add(node, g, values, grads):
    a, b = node.inputs
    _accum(grads, a, g, values[a].shape)
    _accum(grads, b, g, values[b].shape)


def _bw_mul(node, g, values, grads):
    a, b = node.inputs
    _accum(grads, a, g * values[b], values[a].shape)
    _accum(grads, b, g * values[a], values[b].shape)


def _bw_matmul(node, g, values, grads):
    a, b = node.inputs
    av, bv = values[a], values[b]
    a2 = av.reshape(1, -1) if av.ndim == 1 else av
    b2 = bv.reshape(-1, 1) if bv.ndim == 1 else bv
    g2 = g.reshape(a2.shape[0], b2.shape[1])
    _accum(grads, a, (g2 @ b2.T).reshape(av.shape), av.shape)
    _accum(grads, b, (a2.T @ g2).reshape(bv.shape), bv.shape)


def _bw_gather(node, g, values, grads):
    (t,) = node.inputs
    delta = np.zeros(values[t].shape)
    ids = node.meta["ids"]
    np.add.at(delta, np.atleast_1d(ids), g if not isinstance(ids, int) else g[None, :])
    _accum(grads, t, delta, values[t].shape)


def _bw_tanh(node, g, values, grads):
    (a,) = node.inputs
    y = values[node.idx]
    _accum(grads, a, g * (1.0 - y * y), values[a].shape)


def _bw_softmax(node, g, values, grads):
    (a,) = node.inputs
    y = values[node.idx]
    inner = np.sum(g * y, axis=-1, keepdims=True)
    _accum(grads, a, (g - inner) * y, values[a].shape)


def _bw_log(node, g, values, grads):
    (a,) = node.inputs
    x = values[a]
    floor = node.meta["floor"]
    denom = np.maximum(x, floor) if floor > 0 else x
    _accum(grads, a, g / denom, x.shape)


def _bw_sum(node, g, values, grads):
    (a,) = node.inputs
    x = values[a]
    axis = node.meta["axis"]
    if axis is None:
        delta = np.broadcast_to(g, x.shape).copy()
    else:
        delta = np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()
    _accum(grads, a, delta, x.shape)


def _bw_sqrt(node, g, values, grads):
    (a,) = node.inputs
    y = values[node.idx]
    # y already reflects the floor clamp, so the factor is capped there.
    _accum(grads, a, g * 0.5 / y, values[a].shape)


def _bw_norm(node, g, values, grads):
    (a,) = node.inputs
    x = values[a]
    n = max(float(values[node.idx]), 1e-300)
    _accum(grads, a, float(g) * x / n, x.shape)


def _bw_stack(node, g, values, grads):
    for row, idx in enumerate(node.inputs):
        _accum(grads, idx, g[row], values[idx].shape)


_BACKWARD = {
    "add": _bw_add,
    "mul": _bw_mul,
    "matmul": _bw_matmul,
    "gather": _bw_gather,
    "tanh": _bw_tanh,
    "softmax": _bw_softmax,
    "log": _bw_log,
    "sum": _bw_sum,
    "scale": lambda n, g, v, gr: _accum(gr, n.inputs[0], g * n.meta["c"], v[n.inputs[0]].shape),
    "sqrt": _bw_sqrt,
    "norm": _bw_norm,
    "stack": _bw_stack,
}


def finite_diff_check(tape: Tape, params: ParamSet, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per element is |analytic - fd| / max(1, |fd|); returns the max over
    every parameter element, or 0.0 for a parameter-free tape. Central
    differences give O(epsilon^2) truncation error.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ShapeError("epsilon must lie in (0, 1e-2]")
    out = tape.forward(params)
    if out.shape != ():
        raise ShapeError("finite_diff_check needs a scalar output")
    analytic = tape.backward()
    worst = 0.0
    for name in analytic.names:
        if name not in params:
            continue
        base = params[name]
        grad = analytic[name]
        flat = base.ravel()
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + epsilon
            hi = float(tape.forward(_replaced(params, name, bumped.reshape(base.shape))))
            bumped[i] = flat[i] - epsilon
            lo = float(tape.forward(_replaced(params, name, bumped.reshape(base.shape))))
            fd = (hi - lo) / (2.0 * epsilon)
            err = abs(grad.ravel()[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    # leave the tape in a consistent state for the caller
    tape.forward(params)
    return worst


def _replaced(params: ParamSet, name: str, arr: np.ndarray) -> ParamSet:
    d = {k: v for k, v in params.items()}
    d[name] = arr
    return ParamSet(d)
