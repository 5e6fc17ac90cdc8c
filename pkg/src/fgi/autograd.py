"""Tape-based reverse-mode differentiation with a stop-gradient operator.

Every differentiable primitive is an entry in ``OPS``: a forward function
over input values and a vector-Jacobian product.  A :class:`Tape` records
nodes in creation order, so input indices are always smaller than the
consuming node's index and :func:`backward` is a single reverse sweep.

``detach`` and ``gt0`` are non-differentiable: their outputs never request
gradients, so nothing flows back through them.  The ``custom`` kind is a
Heaviside step whose backward multiplies by a registered surrogate shape,
and the two ``fused_*`` kinds are produced by the graph fusion pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T


class UsageError(ValueError):
    """The autograd API was called with arguments it cannot honour."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return T.reduce_sum(g)
    raise T.ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


@dataclass(frozen=True)
class OpDef:
    forward: Callable
    vjp: Optional[Callable] = None
    differentiable: bool = True


def _vjp_add(g, ins, out, attrs, needs):
    return [_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)]


def _vjp_sub(g, ins, out, attrs, needs):
    neg = T.map_unary("neg", g) if needs[1] else None
    return [
        _unbroadcast(g, ins[0].shape),
        None if neg is None else _unbroadcast(neg, ins[1].shape),
    ]


def _vjp_mul(g, ins, out, attrs, needs):
    a, b = ins
    return [
        _unbroadcast(T.elementwise("mul", g, b), a.shape) if needs[0] else None,
        _unbroadcast(T.elementwise("mul", g, a), b.shape) if needs[1] else None,
    ]


def _vjp_div(g, ins, out, attrs, needs):
    a, b = ins
    ga = gb = None
    if needs[0]:
        ga = _unbroadcast(T.elementwise("div", g, b), a.shape)
    if needs[1]:
        # d(a/b)/db = -out / b
        gb = T.elementwise("mul", g, T.map_unary("neg", T.elementwise("div", out, b)))
        gb = _unbroadcast(gb, b.shape)
    return [ga, gb]


def _vjp_tanh(g, ins, out, attrs, needs):
    one_minus = T.elementwise("sub", T.scalar(1.0, out.dtype), T.elementwise("mul", out, out))
    return [T.elementwise("mul", g, one_minus)]


def _vjp_matmul(g, ins, out, attrs, needs):
    a, b = ins
    return [
        T.matmul(g, b.T) if needs[0] else None,
        T.matmul(a.T, g) if needs[1] else None,
    ]


def _vjp_sum(g, ins, out, attrs, needs):
    shape = ins[0].shape
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [T.freeze(np.broadcast_to(g, shape).copy())]


# Surrogate derivative shapes used by ``custom`` nodes, keyed by token prefix.
_SURROGATE_FACTORIES: Dict[str, Callable[[str], Callable]] = {}


def register_surrogate(prefix: str, factory: Callable[[str], Callable]) -> None:
    """Make ``custom`` nodes whose token starts with ``prefix`` resolvable."""
    _SURROGATE_FACTORIES[prefix] = factory


@lru_cache(maxsize=None)
def resolve_surrogate(token: str) -> Callable:
    prefix = token.split(":", 1)[0]
    try:
        return _SURROGATE_FACTORIES[prefix](token)
    except KeyError:
        raise UsageError(f"no surrogate registered for {token!r}") from None


def _vjp_custom(g, ins, out, attrs, needs):
    shape_fn = resolve_surrogate(attrs["surrogate"])
    return [T.elementwise("mul", g, shape_fn(ins[0]))]


# Fused kinds match their unfused expansion for any operand shapes,
# including scalar broadcast inside the original mul/add.
def _broadcast_to(value: np.ndarray, shape: tuple) -> np.ndarray:
    if value.shape == shape:
        return value
    return T.freeze(np.broadcast_to(value, shape).copy())


def _fused_inject_forward(ins, attrs):
    x, d, f = ins
    return _broadcast_to(f, T.result_shape(T.result_shape(x.shape, d.shape), f.shape))


def _fused_inject_vjp(g, ins, out, attrs, needs):
    x, d, _ = ins
    g = _unbroadcast(g, T.result_shape(x.shape, d.shape))
    return [_unbroadcast(T.elementwise("mul", g, d), x.shape), None, None]


def _fused_bypass_forward(ins, attrs):
    gx, f = ins
    return _broadcast_to(f, T.result_shape(gx.shape, f.shape))


def _fused_bypass_vjp(g, ins, out, attrs, needs):
    return [_unbroadcast(g, ins[0].shape), None]


def _forward_leaf(ins, attrs):
    raise UsageError("leaf nodes carry their own value")


OPS: Dict[str, OpDef] = {
    "leaf": OpDef(_forward_leaf),
    "add": OpDef(lambda ins, a: T.elementwise("add", *ins), _vjp_add),
    "sub": OpDef(lambda ins, a: T.elementwise("sub", *ins), _vjp_sub),
    "mul": OpDef(lambda ins, a: T.elementwise("mul", *ins), _vjp_mul),
    "div": OpDef(lambda ins, a: T.elementwise("div", *ins), _vjp_div),
    "neg": OpDef(
        lambda ins, a: T.map_unary("neg", ins[0]),
        lambda g, ins, out, a, n: [T.map_unary("neg", g)],
    ),
    "exp": OpDef(
        lambda ins, a: T.map_unary("exp", ins[0]),
        lambda g, ins, out, a, n: [T.elementwise("mul", g, out)],
    ),
    "log": OpDef(
        lambda ins, a: T.map_unary("log", ins[0]),
        lambda g, ins, out, a, n: [T.elementwise("div", g, ins[0])],
    ),
    "tanh": OpDef(lambda ins, a: T.map_unary("tanh", ins[0]), _vjp_tanh),
    "matmul": OpDef(lambda ins, a: T.matmul(*ins), _vjp_matmul),
    "sum": OpDef(lambda ins, a: T.reduce_sum(ins[0], a.get("axis")), _vjp_sum),
    "reshape": OpDef(
        lambda ins, a: T.freeze(ins[0].reshape(a["shape"])),
        lambda g, ins, out, a, n: [T.freeze(g.reshape(ins[0].shape))],
    ),
    # Identity forward sharing the input buffer; zero derivative.
    "detach": OpDef(lambda ins, a: ins[0], differentiable=False),
    "gt0": OpDef(lambda ins, a: T.map_unary("gt0", ins[0]), differentiable=False),
    # Stabilising shift for softmax; keeps the reduced axis with extent 1.
    "max": OpDef(
        lambda ins, a: T.freeze(np.max(ins[0], axis=a["axis"], keepdims=True)),
        differentiable=False,
    ),
    "custom": OpDef(lambda ins, a: T.map_unary("gt0", ins[0]), _vjp_custom),
    # inputs (x, d, f): value f, x receives upstream * d
    "fused_inject": OpDef(_fused_inject_forward, _fused_inject_vjp),
    # inputs (g, f): value f, g receives upstream unchanged
    "fused_bypass": OpDef(_fused_bypass_forward, _fused_bypass_vjp),
}


@dataclass
class OpRecord:
    kind: str
    inputs: tuple
    attrs: dict
    value: np.ndarray
    needs_grad: bool


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def kind(self) -> str:
        return self.tape.nodes[self.index].kind

    @property
    def requires_grad(self) -> bool:
        return self.tape.nodes[self.index].needs_grad

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tape.grads.get(self.index)

    def __repr__(self):
        return f"Var(#{self.index} {self.kind}, shape={self.shape})"

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise UsageError("operands live on different tapes")
            return other
        if isinstance(other, np.ndarray) and other.ndim > 0:
            return self.tape.leaf(other, requires_grad=False)
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    def __radd__(self, other):
        return self.tape.apply("add", self._lift(other), self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.tape.apply("mul", self._lift(other), self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, self._lift(other))

    def __rtruediv__(self, other):
        return self.tape.apply("div", self._lift(other), self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def exp(self):
        return self.tape.apply("exp", self)

    def log(self):
        return self.tape.apply("log", self)

    def tanh(self):
        return self.tape.apply("tanh", self)

    def gt0(self):
        return self.tape.apply("gt0", self)

    def sum(self, axis: Optional[int] = None):
        return self.tape.apply("sum", self, axis=axis)

    def max(self, axis: int):
        """Row/column maximum as a constant (no gradient flows through it)."""
        return self.tape.apply("max", self, axis=axis)

    def reshape(self, shape: Sequence[int]):
        return self.tape.apply("reshape", self, shape=tuple(int(s) for s in shape))

    def detach(self):
        return self.tape.apply("detach", self)


@dataclass
class Tape:
    """Append-only record of operations; single-threaded."""

    dtype: type = T.DEFAULT_DTYPE
    nodes: List[OpRecord] = field(default_factory=list)
    grads: Dict[int, np.ndarray] = field(default_factory=dict)
    names: Dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)

    def _push(self, record: OpRecord) -> Var:
        self.nodes.append(record)
        return Var(self, len(self.nodes) - 1)

    def leaf(self, t, requires_grad: bool = False, name: Optional[str] = None) -> Var:
        value = np.asarray(t)
        if value.dtype != self.dtype or value.flags.writeable:
            value = T.freeze(np.array(value, dtype=self.dtype))
        index = len(self.nodes)
        name = name or f"n{index}"
        if name in self.names:
            raise UsageError(f"duplicate leaf name {name!r}")
        self.names[name] = index
        attrs = {"name": name, "grad": bool(requires_grad)}
        return self._push(OpRecord("leaf", (), attrs, value, bool(requires_grad)))

    def const(self, value: float) -> Var:
        """Scalar constant leaf; its value is part of the graph structure."""
        index = len(self.nodes)
        v = T.scalar(value, self.dtype)
        attrs = {"name": f"n{index}", "grad": False, "value": float(v)}
        self.names[attrs["name"]] = index
        return self._push(OpRecord("leaf", (), attrs, v, False))

    def apply(self, kind: str, *inputs: Var, **attrs) -> Var:
        op = OPS[kind]
        for v in inputs:
            if v.tape is not self:
                raise UsageError("operands live on different tapes")
        values = [self.nodes[v.index].value for v in inputs]
        out = op.forward(values, attrs)
        needs = op.differentiable and any(self.nodes[v.index].needs_grad for v in inputs)
        idx = tuple(v.index for v in inputs)
        return self._push(OpRecord(kind, idx, attrs, out, needs))

    def var(self, name: str) -> Var:
        return Var(self, self.names[name])

    def leaves(self, requires_grad: Optional[bool] = None) -> List[Var]:
        out = []
        for i, rec in enumerate(self.nodes):
            if rec.kind != "leaf":
                continue
            if requires_grad is None or rec.attrs["grad"] == requires_grad:
                out.append(Var(self, i))
        return out

    def dump(self) -> str:
        """Deterministic textual listing: one node per line."""
        from .snapshot import snapshot

        return snapshot(self).dump()


def detach(x: Var) -> Var:
    return x.detach()


def gt0(x: Var) -> Var:
    return x.gt0()


def _unary(name: str):
    def fn(x):
        if isinstance(x, Var):
            return x.tape.apply(name, x)
        if not isinstance(x, np.ndarray):
            x = np.asarray(x, dtype=T.DEFAULT_DTYPE)
        return T.map_unary(name, x)

    fn.__name__ = name
    fn.__doc__ = f"Elementwise {name} on a Var (recorded) or a plain array."
    return fn


exp = _unary("exp")
tanh = _unary("tanh")
log = _unary("log")


def backward(root: Var, seed: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Accumulate d(root)/d(leaf) for every gradient-requiring leaf.

    Returns a mapping from leaf name to gradient; the same arrays are
    reachable through ``Var.grad``.  Leaves not connected to ``root`` get
    zeros.
    """
    tape = root.tape
    rv = root.value
    if seed is None:
        if rv.shape != ():
            raise UsageError(f"backward from non-scalar root {rv.shape} needs a seed")
        seed = T.scalar(1.0, rv.dtype)
    else:
        seed = np.asarray(seed, dtype=rv.dtype)
        if seed.shape != rv.shape:
            raise T.ShapeError(f"seed shape {seed.shape} != root shape {rv.shape}")

    nodes = tape.nodes
    grads: List[Optional[np.ndarray]] = [None] * (root.index + 1)
    grads[root.index] = seed
    for i in range(root.index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        rec = nodes[i]
        if rec.kind == "leaf" or not rec.needs_grad:
            continue
        needs = [nodes[j].needs_grad for j in rec.inputs]
        values = [nodes[j].value for j in rec.inputs]
        contribs = OPS[rec.kind].vjp(g, values, rec.value, rec.attrs, needs)
        for j, need, c in zip(rec.inputs, needs, contribs):
            if not need or c is None:
                continue
            grads[j] = c if grads[j] is None else T.elementwise("add", grads[j], c)
        grads[i] = None

    tape.grads = {}
    out = {}
    for i, rec in enumerate(nodes):
        if rec.kind == "leaf" and rec.attrs["grad"]:
            g = grads[i] if i < len(grads) else None
            if g is None:
                g = T.zeros(rec.value.shape, rec.value.dtype)
            tape.grads[i] = g
            out[rec.attrs["name"]] = g
    return out


def grad_check(f: Callable[[Var], Var], x, h: float = 1e-6) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps a Var to a Var; the scalar objective is ``sum(f(x))``.  The
    finite-difference side sums the elementwise differences
    ``f(x + h e_i) - f(x - h e_i)`` so untouched elements cancel exactly.
    """
    x = np.array(x, dtype=T.DEFAULT_DTYPE)
    tape = Tape()
    xv = tape.leaf(x, requires_grad=True, name="x")
    backward(f(xv).sum())
    auto = xv.grad

    def evaluate(point):
        return f(Tape().leaf(point, name="x")).value

    flat = x.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        diff = evaluate(plus.reshape(x.shape)) - evaluate(minus.reshape(x.shape))
        fd[i] = np.sum(diff) / (plus[i] - minus[i])
    fd = fd.reshape(x.shape)
    if fd.size == 0:
        return 0.0
    return float(np.max(np.abs(auto - fd) / (np.abs(fd) + 1e-12)))
