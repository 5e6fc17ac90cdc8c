"""Static snapshots of a tape: text format and replay.

Text format, one node per line after an optional ``#`` header::

    <index> <kind> <comma-separated inputs or -> [key=value ...]
    outputs <comma-separated indices>

Scalar constants carry ``value=``; every other leaf is referenced by
``name=`` and gets its tensor from the in-memory snapshot or from feeds
supplied to :func:`replay`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .autograd import OPS, OpRecord, Tape, UsageError, Var

HEADER = "# fgi-snapshot v1"


class GraphValidationError(ValueError):
    """A snapshot is not a well-formed topologically ordered graph."""


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: Tuple[int, ...] = ()
    attrs: Tuple[Tuple[str, object], ...] = ()

    def attr(self, key: str, default=None):
        for k, v in self.attrs:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class GraphSnapshot:
    nodes: Tuple[Node, ...]
    outputs: Tuple[int, ...]
    values: Mapping[str, np.ndarray] = field(default_factory=dict, compare=False, hash=False)

    def __len__(self):
        return len(self.nodes)

    def validate(self) -> "GraphSnapshot":
        for i, node in enumerate(self.nodes):
            if node.kind not in OPS:
                raise GraphValidationError(f"node {i}: unknown kind {node.kind!r}")
            if node.kind == "leaf":
                if node.inputs:
                    raise GraphValidationError(f"node {i}: leaf with inputs")
                if node.attr("name") is None:
                    raise GraphValidationError(f"node {i}: leaf without name")
            for j in node.inputs:
                if not 0 <= j < i:
                    raise GraphValidationError(f"node {i}: dangling input {j}")
        for j in self.outputs:
            if not 0 <= j < len(self.nodes):
                raise GraphValidationError(f"dangling output {j}")
        return self

    @cached_property
    def plan(self) -> List[tuple]:
        """Per node: (kind, op, inputs, attrs dict) ready for execution."""
        return [(n.kind, OPS[n.kind], n.inputs, dict(n.attrs)) for n in self.nodes]

    def consumers(self) -> List[List[int]]:
        users: List[List[int]] = [[] for _ in self.nodes]
        for i, node in enumerate(self.nodes):
            for j in node.inputs:
                users[j].append(i)
        return users

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)

    def dump(self) -> str:
        lines = [HEADER]
        for i, node in enumerate(self.nodes):
            ins = ",".join(map(str, node.inputs)) or "-"
            parts = [str(i), node.kind, ins] + [f"{k}={_fmt(k, v)}" for k, v in node.attrs]
            lines.append(" ".join(parts))
        lines.append("outputs " + (",".join(map(str, self.outputs)) or "-"))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "GraphSnapshot":
        nodes: List[Node] = []
        outputs: Tuple[int, ...] = ()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if fields[0] == "outputs":
                outputs = _parse_indices(fields[1] if len(fields) > 1 else "-")
                continue
            if len(fields) < 3:
                raise GraphValidationError(f"line {lineno}: expected '<index> <kind> <inputs>'")
            if int(fields[0]) != len(nodes):
                raise GraphValidationError(f"line {lineno}: indices must be dense and ordered")
            attrs = []
            for item in fields[3:]:
                key, _, val = item.partition("=")
                attrs.append((key, _parse(key, val)))
            nodes.append(Node(fields[1], _parse_indices(fields[2]), tuple(attrs)))
        return cls(tuple(nodes), outputs).validate()


def _fmt(key: str, value) -> str:
    if key == "shape":
        return ",".join(map(str, value))
    if key == "grad":
        return "1" if value else "0"
    if key == "axis":
        return "none" if value is None else str(value)
    if key == "value":
        return repr(float(value))
    return str(value)


def _parse(key: str, text: str):
    if key == "shape":
        return tuple(int(s) for s in text.split(",") if s)
    if key == "grad":
        return text == "1"
    if key == "axis":
        return None if text == "none" else int(text)
    if key == "value":
        return float(text)
    return text


def _parse_indices(text: str) -> Tuple[int, ...]:
    if text == "-":
        return ()
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise GraphValidationError(f"bad index list {text!r}") from None


def _freeze_attrs(attrs: dict) -> Tuple[Tuple[str, object], ...]:
    return tuple(sorted(attrs.items()))


def snapshot(tape: Tape, outputs: Optional[Sequence[Var]] = None) -> GraphSnapshot:
    """Export the whole tape as an immutable static graph."""
    if outputs is None:
        outs = (len(tape.nodes) - 1,) if tape.nodes else ()
    else:
        outs = tuple(v.index for v in outputs)
    nodes = []
    values: Dict[str, np.ndarray] = {}
    for rec in tape.nodes:
        nodes.append(Node(rec.kind, tuple(rec.inputs), _freeze_attrs(rec.attrs)))
        if rec.kind == "leaf" and "value" not in rec.attrs:
            values[rec.attrs["name"]] = rec.value
    return GraphSnapshot(tuple(nodes), outs, values)


def replay(
    snap: GraphSnapshot,
    feeds: Optional[Mapping[str, np.ndarray]] = None,
    dtype=None,
) -> Tuple[Tape, List[Var]]:
    """Execute a snapshot on a fresh tape and return it with its outputs.

    Leaves take their tensor from ``feeds`` by name, falling back to the
    values captured when the snapshot was taken.
    """
    feeds = feeds or {}
    tape = Tape(dtype=dtype or T.DEFAULT_DTYPE)
    nodes = tape.nodes
    for i, (kind, op, inputs, attrs) in enumerate(snap.plan):
        if kind == "leaf":
            name = attrs["name"]
            if "value" in attrs:
                value = T.scalar(attrs["value"], tape.dtype)
            elif name in feeds:
                value = np.asarray(feeds[name], dtype=tape.dtype)
            elif name in snap.values:
                value = snap.values[name]
            else:
                raise UsageError(f"no value for leaf {name!r}")
            if value.dtype != tape.dtype or value.flags.writeable:
                value = T.freeze(np.array(value, dtype=tape.dtype))
            tape.names[name] = i
            nodes.append(OpRecord("leaf", (), attrs, value, bool(attrs.get("grad"))))
            continue
        ins = [nodes[j] for j in inputs]
        out = op.forward([r.value for r in ins], attrs)
        needs = op.differentiable and any(r.needs_grad for r in ins)
        nodes.append(OpRecord(kind, inputs, attrs, out, needs))
    return tape, [Var(tape, j) for j in snap.outputs]
