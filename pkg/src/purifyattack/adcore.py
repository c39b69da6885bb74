"""Minimal reverse-mode autodiff over float64 numpy arrays.

A :class:`Tape` records eagerly evaluated primitives and can be released as a
unit, which is what segment-wise replay needs: build a one-step graph, pull a
vector-Jacobian product through it, throw it away.

Every primitive is reachable through a functional wrapper (``matmul``,
``tanh``...).  When none of the arguments is a :class:`Node` the wrapper just
evaluates the forward rule on plain arrays, so the same model code runs with
or without a graph and produces bitwise-identical values either way.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np


class TapeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class MemoryMeter:
    """Byte counter for live tape storage (not OS memory)."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def reset(self) -> None:
        self.current = 0
        self.peak = 0

    def allocate(self, nbytes: int) -> None:
        self.current += nbytes
        if self.current > self.peak:
            self.peak = self.current

    def free(self, nbytes: int) -> None:
        self.current -= nbytes


DEFAULT_METER = MemoryMeter()

_node_ids = itertools.count(1)


class Node:
    __slots__ = ("id", "op", "inputs", "saved", "attrs", "value", "tape",
                 "requires_grad", "is_var", "nbytes")

    def __init__(self, op, inputs, saved, attrs, value, tape, requires_grad, is_var, nbytes):
        self.id = next(_node_ids)
        self.op = op
        self.inputs = inputs
        self.saved = saved
        self.attrs = attrs
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.is_var = is_var
        self.nbytes = nbytes

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        kind = self.op or ("var" if self.is_var else "const")
        return f"Node(id={self.id}, {kind}, shape={self.shape})"


class GradMap(dict):
    """Node id -> gradient array.  Lookup also accepts the node itself."""

    def __getitem__(self, key):
        if isinstance(key, Node):
            key = key.id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Node):
            key = key.id
        return super().__contains__(key)


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int
    forward: Callable
    backward: Callable
    check: Callable | None = None


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _freeze(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable and a.base is None:
        a.flags.writeable = False
    return a


# ---------------------------------------------------------------- primitives


def _same_shape(name):
    def check(shapes, attrs):
        if shapes[0] != shapes[1]:
            raise ShapeError(f"{name}: shape mismatch {shapes[0]} vs {shapes[1]}")
    return check


def _check_matmul(shapes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise ShapeError(f"matmul: incompatible shapes {a} and {b}")


def _check_badd(shapes, attrs):
    x, b = shapes
    if len(b) != 1 or len(x) < 1 or x[-1] != b[0]:
        raise ShapeError(f"badd: cannot add bias {b} to {x}")


def _check_reduce(shapes, attrs):
    axis = attrs.get("axis")
    if axis is not None and not -len(shapes[0]) <= axis < len(shapes[0]):
        raise ShapeError(f"reduce: axis {axis} out of range for shape {shapes[0]}")


def _check_concat(shapes, attrs):
    axis = attrs["axis"]
    ref = shapes[0]
    for s in shapes[1:]:
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: incompatible shapes {list(shapes)} along axis {axis}")


def _check_ce(shapes, attrs):
    (s,) = shapes
    labels = attrs["labels"]
    if len(s) != 2 or labels.shape != (s[0],):
        raise ShapeError(f"softmax_ce: logits {s} with labels {labels.shape}")
    if s[1] < 2:
        raise ShapeError(f"softmax_ce: need at least 2 classes, got {s[1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= s[1]):
        raise ValueError(f"softmax_ce: labels outside [0, {s[1]})")


def _unbroadcast_sum(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def _softmax_ce_fw(z, labels):
    shift = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = logsum - shift[rows, labels]
    probs = np.exp(shift - logsum[:, None])
    return loss, (probs,)


def _softmax_ce_bw(g, node):
    (probs,) = node.saved
    labels = node.attrs["labels"]
    d = probs.copy()
    d[np.arange(d.shape[0]), labels] -= 1.0
    return (d * g[:, None],)


def _log_fw(a):
    if np.any(a <= 0):
        raise ValueError("log: non-positive input")
    return np.log(a), (a,)


def _sqrt_fw(a):
    if np.any(a < 0):
        raise ValueError("sqrt: negative input")
    out = np.sqrt(a)
    return out, (out,)


def _concat_bw(g, node):
    axis = node.attrs["axis"]
    sizes = [inp.shape[axis] for inp in node.inputs]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, cuts, axis=axis))


PRIMITIVES: dict[str, Primitive] = {}


def _register(p: Primitive) -> None:
    PRIMITIVES[p.name] = p


_register(Primitive("add", 2, lambda a, b: (a + b, ()), lambda g, n: (g, g), _same_shape("add")))
_register(Primitive("sub", 2, lambda a, b: (a - b, ()), lambda g, n: (g, -g), _same_shape("sub")))
_register(Primitive(
    "mul", 2, lambda a, b: (a * b, (a, b)),
    lambda g, n: (g * n.saved[1], g * n.saved[0]), _same_shape("mul")))
_register(Primitive(
    "scale", 1, lambda a, c: (a * c, ()), lambda g, n: (g * n.attrs["c"],)))
_register(Primitive(
    "matmul", 2, lambda a, b: (a @ b, (a, b)),
    lambda g, n: (g @ n.saved[1].T if n.inputs[0].requires_grad else None,
                  n.saved[0].T @ g if n.inputs[1].requires_grad else None),
    _check_matmul))
_register(Primitive(
    "badd", 2, lambda x, b: (x + b, ()),
    lambda g, n: (g, g.reshape(-1, g.shape[-1]).sum(axis=0)), _check_badd))
_register(Primitive(
    "tanh", 1, lambda a: ((o := np.tanh(a)), (o,)),
    lambda g, n: (g * (1.0 - n.saved[0] * n.saved[0]),)))
_register(Primitive(
    "relu", 1, lambda a: ((a > 0) * a, (a > 0,)),
    lambda g, n: (g * n.saved[0],)))
_register(Primitive(
    "exp", 1, lambda a: ((o := np.exp(a)), (o,)), lambda g, n: (g * n.saved[0],)))
_register(Primitive("log", 1, _log_fw, lambda g, n: (g / n.saved[0],)))
_register(Primitive(
    "square", 1, lambda a: (a * a, (a,)), lambda g, n: (2.0 * n.saved[0] * g,)))
_register(Primitive("sqrt", 1, _sqrt_fw, lambda g, n: (g / (2.0 * n.saved[0]),)))
_register(Primitive(
    "sum", 1, lambda a, axis=None: (np.sum(a, axis=axis), ()),
    lambda g, n: (_unbroadcast_sum(g, n.inputs[0].shape, n.attrs.get("axis")),),
    _check_reduce))
_register(Primitive(
    "mean", 1, lambda a, axis=None: (np.mean(a, axis=axis), ()),
    lambda g, n: (_unbroadcast_sum(g, n.inputs[0].shape, n.attrs.get("axis"))
                  * (n.value.size / n.inputs[0].value.size),),
    _check_reduce))
_register(Primitive(
    "concat", -1, lambda *xs, axis: (np.concatenate(xs, axis=axis), ()), _concat_bw, _check_concat))
_register(Primitive("softmax_ce", 1, _softmax_ce_fw, _softmax_ce_bw, _check_ce))


def _evaluate(op: str, values: Sequence[np.ndarray], attrs: Mapping):
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise KeyError(f"unknown primitive {op!r}")
    if prim.arity >= 0 and len(values) != prim.arity:
        raise ShapeError(f"{op}: expected {prim.arity} inputs, got {len(values)}")
    if prim.check is not None:
        prim.check([v.shape for v in values], attrs)
    out, saved = prim.forward(*values, **attrs)
    out = np.asarray(out, dtype=np.float64)
    return out, saved


# ---------------------------------------------------------------------- tape


class Tape:
    """Ordered record of eagerly evaluated primitives.

    Bytes held by op nodes (outputs plus any freshly allocated saved arrays)
    are charged to ``meter`` on record and returned on :meth:`release`.
    Leaves reference caller-owned arrays and are not charged.
    """

    def __init__(self, meter: MemoryMeter | None = None):
        self.meter = meter if meter is not None else DEFAULT_METER
        self.nodes: list[Node] = []
        self.live = True
        self.nbytes = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        return self

    def __exit__(self, *exc) -> None:
        self.release()

    def _ensure_live(self) -> None:
        if not self.live:
            raise TapeError("tape has been released")

    def var(self, value) -> Node:
        """Leaf whose gradient :meth:`backward` reports."""
        self._ensure_live()
        node = Node(None, (), (), {}, _as_array(value), self, True, True, 0)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        self._ensure_live()
        node = Node(None, (), (), {}, _as_array(value), self, False, False, 0)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise TapeError("input node belongs to a different tape")
            if not self.live:
                raise TapeError("tape has been released")
            return x
        return self.const(x)

    def record(self, op: str, inputs: Sequence, **attrs) -> Node:
        self._ensure_live()
        nodes = tuple(self._lift(x) for x in inputs)
        values = [n.value for n in nodes]
        out, saved = _evaluate(op, values, attrs)
        nbytes = out.nbytes
        for s in saved:
            if not any(s is v for v in values) and s is not out:
                nbytes += s.nbytes
        node = Node(op, nodes, saved, attrs, _freeze(out), self,
                    any(n.requires_grad for n in nodes), False, nbytes)
        self.nodes.append(node)
        self.nbytes += nbytes
        self.meter.allocate(nbytes)
        return node

    def backward(self, root: Node, seed=None, extra_seeds: Mapping[Node, np.ndarray] | None = None,
                 wrt: Sequence[Node] | None = None) -> GradMap:
        """Vector-Jacobian products from ``root`` back to the variable leaves.

        ``extra_seeds`` adds a direct gradient at interior nodes.  Each one is
        added to a node's gradient after every consumer has contributed, i.e.
        exactly when the node is reached in reverse order.
        """
        self._ensure_live()
        if not isinstance(root, Node) or root.tape is not self:
            raise TapeError("root is not on this tape")
        seed = np.ones(root.shape) if seed is None else _as_array(seed)
        if seed.shape != root.shape:
            raise ShapeError(f"backward: seed shape {seed.shape} != root shape {root.shape}")
        extra = {}
        for node, g in (extra_seeds or {}).items():
            if node.tape is not self:
                raise TapeError("extra seed node is not on this tape")
            g = _as_array(g)
            if g.shape != node.shape:
                raise ShapeError(f"backward: extra seed shape {g.shape} != node shape {node.shape}")
            extra[node.id] = g
        keep = {n.id for n in wrt} if wrt is not None else set()

        grads: dict[int, np.ndarray] = {root.id: seed}
        out = GradMap()
        for node in reversed(self.nodes):
            if not node.requires_grad:
                continue
            g = grads.pop(node.id, None)
            e = extra.get(node.id)
            if e is not None:
                g = e if g is None else g + e
            if g is None:
                continue
            if node.is_var or node.id in keep:
                out[node.id] = g
            if node.op is None:
                continue
            for inp, gi in zip(node.inputs, PRIMITIVES[node.op].backward(g, node)):
                if gi is None or not inp.requires_grad:
                    continue
                prev = grads.get(inp.id)
                grads[inp.id] = gi if prev is None else prev + gi
        for node in self.nodes:
            if (node.is_var or node.id in keep) and node.id not in out:
                out[node.id] = np.zeros(node.shape)
        return out

    def release(self) -> None:
        if not self.live:
            return
        self.meter.free(self.nbytes)
        for node in self.nodes:
            node.saved = ()
            node.inputs = ()
        self.nodes = []
        self.nbytes = 0
        self.live = False


# --------------------------------------------------------- functional layer


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else x


def _tape_of(args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("arguments live on different tapes")
    return tape


def apply(op: str, *args, **attrs):
    tape = _tape_of(args)
    if tape is None:
        out, _ = _evaluate(op, [_as_array(a) for a in args], attrs)
        return out
    return tape.record(op, args, **attrs)


def record(op: str, inputs: Sequence, tape: Tape, **attrs) -> Node:
    return tape.record(op, inputs, **attrs)


def backward(tape: Tape, root: Node, seed=None, **kwargs) -> GradMap:
    return tape.backward(root, seed, **kwargs)


def release(tape: Tape) -> None:
    tape.release()


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def scale(a, c: float):
    return apply("scale", a, c=float(c))


def matmul(a, b):
    return apply("matmul", a, b)


def badd(x, b):
    return apply("badd", x, b)


def tanh(a):
    return apply("tanh", a)


def relu(a):
    return apply("relu", a)


def exp(a):
    return apply("exp", a)


def log(a):
    return apply("log", a)


def square(a):
    return apply("square", a)


def sqrt(a):
    return apply("sqrt", a)


def tsum(a, axis: int | None = None):
    return apply("sum", a, axis=axis)


def tmean(a, axis: int | None = None):
    return apply("mean", a, axis=axis)


def concat(xs: Sequence, axis: int = -1):
    return apply("concat", *xs, axis=axis)


def softmax_ce(logits, labels):
    return apply("softmax_ce", logits, labels=np.asarray(labels, dtype=np.int64))


# ------------------------------------------------------------------- oracle


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x.copy()))
        flat[i] = orig - h
        fm = float(f(x.copy()))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
