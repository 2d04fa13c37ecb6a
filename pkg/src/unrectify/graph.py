"""Immutable directed acyclic computation graphs.

A graph has one input node (always id 0), arcs carrying elements, and one
output node.  Nodes coordinate the arcs: a relay node forwards its single
incoming arc value, a concat node stacks incoming arc values in a fixed
order, an add node sums them, and a duplicate node is a relay whose value
fans out over several outgoing arcs.  Graphs are immutable once built; the
combinators ``series``, ``concatenate``, and ``duplicate`` return new graphs
and never mutate their arguments.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

from . import elements as el

__all__ = [
    "ROLE_INPUT",
    "ROLE_RELAY",
    "ROLE_CONCAT",
    "ROLE_ADD",
    "ROLE_DUPLICATE",
    "ROLES",
    "GraphConstructionError",
    "InvalidGraphError",
    "Node",
    "Arc",
    "Dag",
    "GraphBuilder",
    "ValidationReport",
    "validate",
    "levels",
    "series",
    "concatenate",
    "duplicate",
    "computable_subgraph",
    "forward",
    "forward_batch",
    "uniform_bound_of",
]

ROLE_INPUT = "input"
ROLE_RELAY = "relay"
ROLE_CONCAT = "concat"
ROLE_ADD = "add"
ROLE_DUPLICATE = "duplicate"
ROLES = frozenset({ROLE_INPUT, ROLE_RELAY, ROLE_CONCAT, ROLE_ADD, ROLE_DUPLICATE})


class GraphConstructionError(ValueError):
    """Raised when a combinator or builder is given inconsistent pieces."""


class InvalidGraphError(ValueError):
    """Raised when an operation requires a valid graph and validation fails."""


@dataclass(frozen=True)
class Node:
    id: int
    role: str
    concat_order: tuple[int, ...] = ()  # arc ids, for concat/add nodes


@dataclass(frozen=True, eq=False)
class Arc:
    id: int
    src: int
    dst: int
    elem: el.BasisElement
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class ValidationReport:
    problems: tuple[str, ...]
    node_count: int
    arc_count: int
    reachable_count: int
    is_acyclic: bool

    @property
    def ok(self) -> bool:
        return not self.problems

    def summary(self) -> str:
        status = "valid" if self.ok else "invalid"
        lines = [
            f"{status}: {self.node_count} nodes, {self.arc_count} arcs, "
            f"{self.reachable_count} reachable"
        ]
        lines.extend(f"  - {p}" for p in self.problems)
        return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class Dag:
    """Directed acyclic computation graph over flat float vectors."""

    input_dim: int
    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...]
    output_node: int
    labels: dict = field(default_factory=dict)

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def arc(self, arc_id: int) -> Arc:
        return self.arcs[arc_id]

    @cached_property
    def in_arcs(self) -> tuple[tuple[Arc, ...], ...]:
        incoming: list[list[Arc]] = [[] for _ in self.nodes]
        for arc in self.arcs:
            incoming[arc.dst].append(arc)
        return tuple(tuple(a) for a in incoming)

    @cached_property
    def out_arcs(self) -> tuple[tuple[Arc, ...], ...]:
        outgoing: list[list[Arc]] = [[] for _ in self.nodes]
        for arc in self.arcs:
            outgoing[arc.src].append(arc)
        return tuple(tuple(a) for a in outgoing)

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        """Topological order, smallest node id first among the available."""
        order = _lex_topological_order(len(self.nodes), self.arcs)
        if order is None:
            raise InvalidGraphError("graph contains a cycle")
        return order

    @cached_property
    def node_dims(self) -> tuple[int, ...]:
        self.require_valid()
        return _node_dims(self)[0]

    @cached_property
    def _validation(self) -> ValidationReport:
        return validate(self)

    def require_valid(self) -> None:
        report = self._validation
        if not report.ok:
            raise InvalidGraphError(report.summary())

    @property
    def output_dim(self) -> int:
        return self.node_dims[self.output_node]

    def __repr__(self) -> str:
        return (
            f"Dag(input_dim={self.input_dim}, nodes={len(self.nodes)}, "
            f"arcs={len(self.arcs)}, output={self.output_node})"
        )


def _lex_topological_order(
    n_nodes: int, arcs: Sequence[Arc]
) -> Optional[tuple[int, ...]]:
    indeg = [0] * n_nodes
    succ: list[list[int]] = [[] for _ in range(n_nodes)]
    for arc in arcs:
        indeg[arc.dst] += 1
        succ[arc.src].append(arc.dst)
    ready = [v for v in range(n_nodes) if indeg[v] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, w)
    if len(order) != n_nodes:
        return None
    return tuple(order)


def _node_dims(dag: Dag) -> tuple[tuple[int, ...], list[str]]:
    """Node output dimensions plus any dimension faults found on the way."""
    problems: list[str] = []
    dims = [0] * len(dag.nodes)
    arc_by_id = {arc.id: arc for arc in dag.arcs}
    for nid in dag.topo_order:
        node = dag.nodes[nid]
        incoming = dag.in_arcs[nid]
        if node.role == ROLE_INPUT:
            dims[nid] = dag.input_dim
            continue
        for arc in incoming:
            if arc.in_dim != dims[arc.src]:
                problems.append(
                    f"arc {arc.id} ({arc.src}->{arc.dst}) declares input dim "
                    f"{arc.in_dim} but node {arc.src} produces {dims[arc.src]}"
                )
        if node.role in (ROLE_RELAY, ROLE_DUPLICATE):
            dims[nid] = incoming[0].out_dim if incoming else 0
        elif node.role == ROLE_CONCAT:
            ordered = [arc_by_id[a] for a in node.concat_order if a in arc_by_id]
            dims[nid] = sum(arc.out_dim for arc in ordered)
        elif node.role == ROLE_ADD:
            outs = {arc.out_dim for arc in incoming}
            if len(outs) > 1:
                problems.append(
                    f"dimension fault at node {nid}: add inputs differ {sorted(outs)}"
                )
            dims[nid] = incoming[0].out_dim if incoming else 0
    return tuple(dims), problems


def validate(dag: Dag) -> ValidationReport:
    """Structural and dimensional check; collects problems instead of raising."""
    problems: list[str] = []
    n = len(dag.nodes)

    for i, node in enumerate(dag.nodes):
        if node.id != i:
            problems.append(f"node ids must be dense 0..{n - 1}; position {i} holds id {node.id}")
        if node.role not in ROLES:
            problems.append(f"node {node.id} has unknown role {node.role!r}")
    if n == 0 or dag.nodes[0].role != ROLE_INPUT:
        problems.append("node 0 must be the input node")
    for node in dag.nodes[1:]:
        if node.role == ROLE_INPUT:
            problems.append(f"node {node.id} duplicates the input role")

    for i, arc in enumerate(dag.arcs):
        if arc.id != i:
            problems.append(f"arc ids must be dense; position {i} holds id {arc.id}")
        if not (0 <= arc.src < n and 0 <= arc.dst < n):
            problems.append(f"arc {arc.id} references a missing node")
            continue
        if arc.src == arc.dst:
            problems.append(f"arc {arc.id} is a self-loop on node {arc.src}")
        if (arc.elem.in_dim, arc.elem.out_dim) != (arc.in_dim, arc.out_dim):
            problems.append(
                f"arc {arc.id} declares dims {arc.in_dim}->{arc.out_dim} but its "
                f"element maps {arc.elem.in_dim}->{arc.elem.out_dim}"
            )
    if problems:
        return ValidationReport(tuple(problems), n, len(dag.arcs), 0, False)

    order = _lex_topological_order(n, dag.arcs)
    is_acyclic = order is not None
    if not is_acyclic:
        indeg = [0] * n
        for arc in dag.arcs:
            indeg[arc.dst] += 1
        stack = [v for v in range(n) if indeg[v] == 0]
        seen = set(stack)
        while stack:
            v = stack.pop()
            for arc in dag.arcs:
                if arc.src == v and arc.dst not in seen:
                    indeg[arc.dst] -= 1
                    if indeg[arc.dst] == 0:
                        seen.add(arc.dst)
                        stack.append(arc.dst)
        cyc = sorted(set(range(n)) - seen)
        problems.append(f"cycle through nodes {cyc}")

    incoming = [[] for _ in range(n)]
    outgoing = [[] for _ in range(n)]
    for arc in dag.arcs:
        incoming[arc.dst].append(arc)
        outgoing[arc.src].append(arc)

    for node in dag.nodes:
        n_in = len(incoming[node.id])
        if node.role == ROLE_INPUT and n_in != 0:
            problems.append(f"input node has {n_in} incoming arcs")
        if node.role in (ROLE_RELAY, ROLE_DUPLICATE) and n_in != 1:
            problems.append(f"node {node.id} ({node.role}) needs exactly 1 incoming arc, has {n_in}")
        if node.role in (ROLE_CONCAT, ROLE_ADD):
            if n_in == 0:
                problems.append(f"node {node.id} ({node.role}) has no incoming arcs")
            ids = sorted(a.id for a in incoming[node.id])
            if sorted(node.concat_order) != ids:
                problems.append(
                    f"node {node.id} concat order {list(node.concat_order)} does not "
                    f"match its incoming arcs {ids}"
                )
    for node in dag.nodes[1:]:
        if not incoming[node.id]:
            problems.append(f"node {node.id} has in-degree 0 but is not the input")

    if not (0 <= dag.output_node < n):
        problems.append(f"output node {dag.output_node} does not exist")
        return ValidationReport(tuple(problems), n, len(dag.arcs), 0, is_acyclic)
    if outgoing[dag.output_node]:
        problems.append(f"output node {dag.output_node} has outgoing arcs")
    for node in dag.nodes:
        if node.id != dag.output_node and not outgoing[node.id]:
            problems.append(f"node {node.id} is a dead end (only the output may be a sink)")

    reach = {0}
    frontier = [0]
    while frontier:
        v = frontier.pop()
        for arc in outgoing[v]:
            if arc.dst not in reach:
                reach.add(arc.dst)
                frontier.append(arc.dst)
    unreachable = sorted(set(range(n)) - reach)
    if unreachable:
        problems.append(f"nodes unreachable from the input: {unreachable}")
    coreach = {dag.output_node}
    frontier = [dag.output_node]
    while frontier:
        v = frontier.pop()
        for arc in incoming[v]:
            if arc.src not in coreach:
                coreach.add(arc.src)
                frontier.append(arc.src)
    stranded = sorted(set(range(n)) - coreach)
    if stranded:
        problems.append(f"nodes with no path to the output: {stranded}")

    if is_acyclic and not problems:
        _, dim_problems = _node_dims(dag)
        problems.extend(dim_problems)

    return ValidationReport(tuple(problems), n, len(dag.arcs), len(reach), is_acyclic)


def levels(dag: Dag) -> dict[int, int]:
    """Level of every node: arc count of the longest path from the input."""
    dag.require_valid()
    lvl = {0: 0}
    for nid in dag.topo_order:
        if nid == 0:
            continue
        lvl[nid] = max(lvl[arc.src] for arc in dag.in_arcs[nid]) + 1
    return lvl


def _ordered_in_arcs(dag: Dag, node: Node) -> tuple[Arc, ...]:
    if node.role in (ROLE_CONCAT, ROLE_ADD):
        return tuple(dag.arc(a) for a in node.concat_order)
    return dag.in_arcs[node.id]


def _evaluate(dag: Dag, values: np.ndarray) -> dict[int, np.ndarray]:
    dag.require_valid()
    trace: dict[int, np.ndarray] = {}
    for nid in dag.topo_order:
        node = dag.nodes[nid]
        if node.role == ROLE_INPUT:
            trace[nid] = values
            continue
        arcs = _ordered_in_arcs(dag, node)
        parts = [arc.elem.apply(trace[arc.src]) for arc in arcs]
        if node.role in (ROLE_RELAY, ROLE_DUPLICATE):
            trace[nid] = parts[0]
        elif node.role == ROLE_CONCAT:
            trace[nid] = np.concatenate(parts, axis=-1)
        else:  # add
            total = parts[0]
            for p in parts[1:]:
                total = total + p
            trace[nid] = total
    return trace


def forward(dag: Dag, x) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Evaluate the graph on one input; returns (output, per-node trace)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (dag.input_dim,):
        raise ValueError(f"input must have shape ({dag.input_dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input entries must be finite")
    trace = _evaluate(dag, arr)
    return trace[dag.output_node], trace


def forward_batch(dag: Dag, xs) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Evaluate the graph on a batch of row-vector inputs."""
    arr = np.asarray(xs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != dag.input_dim:
        raise ValueError(f"batch must have shape (n, {dag.input_dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input entries must be finite")
    trace = _evaluate(dag, arr)
    return trace[dag.output_node], trace


def uniform_bound_of(dag: Dag) -> float:
    """Uniform nonlinearity gain bound over every element used in the graph."""
    return el.uniform_bound(arc.elem for arc in dag.arcs)


class GraphBuilder:
    """Mutable scratch pad for assembling a Dag node by node."""

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise GraphConstructionError("input dimension must be positive")
        self.input_dim = input_dim
        self.nodes: list[tuple[int, str]] = [(0, ROLE_INPUT)]
        self.arcs: list[Arc] = []
        self._dims: list[int] = [input_dim]

    def dim(self, node_id: int) -> int:
        return self._dims[node_id]

    def add_node(self, role: str) -> int:
        nid = len(self.nodes)
        self.nodes.append((nid, role))
        self._dims.append(0)
        return nid

    def connect(self, src: int, dst: int, elem: el.BasisElement) -> int:
        if self._dims[src] != elem.in_dim:
            raise GraphConstructionError(
                f"element input dimension {elem.in_dim} does not match node {src} "
                f"dimension {self._dims[src]}"
            )
        aid = len(self.arcs)
        self.arcs.append(Arc(aid, src, dst, elem, elem.in_dim, elem.out_dim))
        role = self.nodes[dst][1]
        if role in (ROLE_RELAY, ROLE_DUPLICATE):
            self._dims[dst] = elem.out_dim
        elif role == ROLE_CONCAT:
            self._dims[dst] += elem.out_dim
        elif role == ROLE_ADD:
            self._dims[dst] = elem.out_dim
        return aid

    def add_relay(self, src: int, elem: el.BasisElement, role: str = ROLE_RELAY) -> int:
        nid = self.add_node(role)
        self.connect(src, nid, elem)
        return nid

    def finish(self, output_node: int, labels: Optional[Mapping] = None) -> Dag:
        incoming: dict[int, list[int]] = {}
        for arc in self.arcs:
            incoming.setdefault(arc.dst, []).append(arc.id)
        nodes = tuple(
            Node(nid, role, tuple(incoming.get(nid, [])) if role in (ROLE_CONCAT, ROLE_ADD) else ())
            for nid, role in self.nodes
        )
        dag = Dag(self.input_dim, nodes, tuple(self.arcs), output_node, dict(labels or {}))
        dag.require_valid()
        return dag


def _builder_from(dag: Dag) -> GraphBuilder:
    b = GraphBuilder(dag.input_dim)
    for node in dag.nodes[1:]:
        b.add_node(node.role)
    dims, _ = _node_dims(dag)
    b._dims = list(dims)
    b.arcs = list(dag.arcs)
    return b


def series(g: Dag, elem: el.BasisElement) -> Dag:
    """Feed the graph's output through one more element."""
    g.require_valid()
    out_dim = g.node_dims[g.output_node]
    if elem.in_dim != out_dim:
        raise GraphConstructionError(
            f"series: graph output dimension {out_dim} does not match element "
            f"input dimension {elem.in_dim}"
        )
    b = _builder_from(g)
    nid = b.add_relay(g.output_node, elem)
    return b.finish(nid, g.labels)


def concatenate(gs: Sequence[Dag]) -> Dag:
    """Merge graphs over a shared input and stack their outputs in order."""
    if not gs:
        raise GraphConstructionError("concatenate needs at least one channel")
    dims = {g.input_dim for g in gs}
    if len(dims) != 1:
        raise GraphConstructionError(f"channels consume different input spaces: {sorted(dims)}")
    for g in gs:
        g.require_valid()

    b = GraphBuilder(gs[0].input_dim)
    outputs = []
    for g in gs:
        node_map = {0: 0}
        for node in g.nodes[1:]:
            node_map[node.id] = b.add_node(node.role)
        for arc in g.arcs:
            b.connect(node_map[arc.src], node_map[arc.dst], arc.elem)
        outputs.append((node_map[g.output_node], g.node_dims[g.output_node]))
    cat = b.add_node(ROLE_CONCAT)
    for out, dim in outputs:
        b.connect(out, cat, el.Identity(dim))
    return b.finish(cat)


def duplicate(g: Dag, m: int) -> Dag:
    """Stack m copies of the graph's output."""
    if m < 1:
        raise GraphConstructionError(f"duplicate needs at least one copy, got {m}")
    g.require_valid()
    b = _builder_from(g)
    dim = g.node_dims[g.output_node]
    cat = b.add_node(ROLE_CONCAT)
    for _ in range(m):
        b.connect(g.output_node, cat, el.Identity(dim))
    return b.finish(cat, g.labels)


def ancestors(dag: Dag, node_id: int) -> set[int]:
    """All nodes with a path to ``node_id`` (excluding the node itself)."""
    seen: set[int] = set()
    frontier = [node_id]
    while frontier:
        v = frontier.pop()
        for arc in dag.in_arcs[v]:
            if arc.src not in seen:
                seen.add(arc.src)
                frontier.append(arc.src)
    return seen


def computable_subgraph(dag: Dag, node_id: int) -> Dag:
    """Sub-graph of every input-to-node path, re-rooted with node as output.

    The kept node set is the ancestor closure of the query node, so the
    result is itself a valid graph computing exactly the value this node
    takes in the full graph.
    """
    dag.require_valid()
    if not (0 <= node_id < len(dag.nodes)):
        raise ValueError(f"node {node_id} does not exist")
    keep = ancestors(dag, node_id) | {node_id}
    if 0 not in keep:
        raise ValueError(f"node {node_id} is not reachable from the input")
    old_ids = sorted(keep)
    node_map = {old: new for new, old in enumerate(old_ids)}

    arc_map: dict[int, int] = {}
    new_arcs: list[Arc] = []
    for arc in dag.arcs:
        if arc.src in keep and arc.dst in keep:
            aid = len(new_arcs)
            arc_map[arc.id] = aid
            new_arcs.append(
                Arc(aid, node_map[arc.src], node_map[arc.dst], arc.elem, arc.in_dim, arc.out_dim)
            )
    new_nodes = []
    for old in old_ids:
        node = dag.nodes[old]
        order = tuple(arc_map[a] for a in node.concat_order if a in arc_map)
        new_nodes.append(Node(node_map[old], node.role, order))
    labels = {k: node_map[v] for k, v in dag.labels.items() if v in keep}
    sub = Dag(dag.input_dim, tuple(new_nodes), tuple(new_arcs), node_map[node_id], labels)
    sub.require_valid()
    return sub
