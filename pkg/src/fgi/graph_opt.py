"""Fusion of gradient-injection and bypass triples in static snapshots.

Recognised structures (``sg`` = ``detach``)::

    inject:  m = x * sg(d);  y = (m - sg(m)) + sg(f)   ->  fused_inject(x, d, f)
    bypass:  y = (g - sg(g)) + sg(f)                   ->  fused_bypass(g, f)

The add may take its operands in either order.  A site is only rewritten
when every interior node (mul, both detaches of the triple, sub, add and,
for inject, ``sg(d)``) is consumed exclusively inside the site and is not a
graph output.  Rewritten graphs give the same forward values as long as
``m`` (or ``g``) is finite, and the same gradients, since both versions
multiply the upstream gradient by ``d`` exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .snapshot import GraphSnapshot, Node


@dataclass(frozen=True)
class RewriteReport:
    pattern: str
    patterns_matched: int
    nodes_before: int
    nodes_after: int

    @property
    def nodes_removed(self) -> int:
        return self.nodes_before - self.nodes_after

    def __add__(self, other: "RewriteReport") -> "RewriteReport":
        return RewriteReport(
            f"{self.pattern}+{other.pattern}",
            self.patterns_matched + other.patterns_matched,
            self.nodes_before,
            other.nodes_after,
        )

    def summary(self) -> str:
        return (
            f"{self.pattern}: {self.patterns_matched} pattern(s) fused, "
            f"{self.nodes_before} -> {self.nodes_after} nodes ({self.nodes_removed} removed)"
        )

    def keyvalues(self) -> str:
        return (
            f"pattern={self.pattern} patterns_matched={self.patterns_matched} "
            f"nodes_removed={self.nodes_removed} nodes_before={self.nodes_before} "
            f"nodes_after={self.nodes_after}"
        )


@dataclass(frozen=True)
class _Site:
    kind: str  # fused node kind
    inputs: Tuple[int, ...]  # old indices
    interior: frozenset
    anchor: int  # old index whose slot the fused node takes
    output: int  # old index of the add


def _tail(nodes, users, outputs, a: int):
    """Match ``(m - sg(m)) + sg(f)`` ending at node ``a``."""
    if nodes[a].kind != "add":
        return None
    p, q = nodes[a].inputs
    for s, df in ((p, q), (q, p)):
        if nodes[s].kind != "sub" or nodes[df].kind != "detach" or s == df:
            continue
        m, dm = nodes[s].inputs
        if nodes[dm].kind != "detach" or nodes[dm].inputs[0] != m or m == dm:
            continue
        if users[s] != [a] or users[dm] != [s] or users[df] != [a]:
            continue
        if {s, dm, df} & outputs:
            continue
        return m, dm, s, df, nodes[df].inputs[0]
    return None


def _match_inject(nodes, users, outputs, a: int) -> Optional[_Site]:
    tail = _tail(nodes, users, outputs, a)
    if tail is None:
        return None
    m, dm, s, df, f = tail
    if nodes[m].kind != "mul" or m in outputs or sorted(users[m]) != sorted([s, dm]):
        return None
    p, q = nodes[m].inputs
    for x, dd in ((p, q), (q, p)):
        if x != dd and nodes[dd].kind == "detach" and users[dd] == [m] and dd not in outputs:
            d = nodes[dd].inputs[0]
            anchor = m if f < m else a
            return _Site("fused_inject", (x, d, f), frozenset({m, dm, s, df, dd, a}), anchor, a)
    return None


def _match_bypass(nodes, users, outputs, a: int) -> Optional[_Site]:
    if _match_inject(nodes, users, outputs, a) is not None:
        return None
    tail = _tail(nodes, users, outputs, a)
    if tail is None:
        return None
    g, dm, s, df, f = tail
    if sorted(users[g]) != sorted([s, dm]):
        return None
    return _Site("fused_bypass", (g, f), frozenset({dm, s, df, a}), a, a)


def _rewrite(snap: GraphSnapshot, matcher, label: str) -> Tuple[GraphSnapshot, RewriteReport]:
    snap.validate()
    nodes = snap.nodes
    users = snap.consumers()
    outputs = set(snap.outputs)
    sites: List[_Site] = []
    for a in range(len(nodes)):
        site = matcher(nodes, users, outputs, a)
        if site is not None:
            sites.append(site)

    removed = set()
    at: Dict[int, _Site] = {}
    for site in sites:
        removed |= site.interior
        at[site.anchor] = site

    remap: Dict[int, int] = {}
    out_nodes: List[Node] = []
    for i, node in enumerate(nodes):
        site = at.get(i)
        if site is not None:
            remap[site.output] = len(out_nodes)
            out_nodes.append(Node(site.kind, tuple(remap[j] for j in site.inputs)))
        if i in removed:
            continue
        remap[i] = len(out_nodes)
        out_nodes.append(Node(node.kind, tuple(remap[j] for j in node.inputs), node.attrs))

    fused = GraphSnapshot(
        tuple(out_nodes), tuple(remap[j] for j in snap.outputs), snap.values
    ).validate()
    return fused, RewriteReport(label, len(sites), len(nodes), len(out_nodes))


def fuse_fgi(g: GraphSnapshot) -> Tuple[GraphSnapshot, RewriteReport]:
    """Collapse every exclusive injection site into one ``fused_inject`` node."""
    return _rewrite(g, _match_inject, "fgi")


def fuse_bypass(g: GraphSnapshot) -> Tuple[GraphSnapshot, RewriteReport]:
    """Collapse every exclusive bypass triple into one ``fused_bypass`` node.

    The stand-in ``g`` and its subgraph stay; only the cancellation
    (``sub``, two ``detach``, ``add``) goes away.
    """
    return _rewrite(g, _match_bypass, "bypass")


def fuse(g: GraphSnapshot) -> Tuple[GraphSnapshot, RewriteReport]:
    once, r1 = fuse_fgi(g)
    twice, r2 = fuse_bypass(once)
    return twice, r1 + r2
