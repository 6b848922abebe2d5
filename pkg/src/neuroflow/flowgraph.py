"""Dataflow graph of the driving pipeline and its per-end-node decomposition.

The graph is declared up front and never changes during a run.  Every node
with out-degree zero anchors one subgraph made of itself and all of its
ancestors.  Within a subgraph nodes are ordered topologically and given a
priority equal to the longest path (in edges) down to the end node, so that
work far upstream is started first.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConfigError,
    CycleDetected,
    DuplicateNodeId,
    SelfLoop,
    UnknownEdgeEndpoint,
)


class NodeKind(str, Enum):
    DNN = "DNN"
    NON_DNN = "NonDNN"


@dataclass(frozen=True)
class ProgramNode:
    id: str
    kind: NodeKind = NodeKind.NON_DNN
    model_ref: str | None = None
    period_ms: float | None = None
    cost_hint_ms: float = 0.0

    def __post_init__(self):
        kind = NodeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if (kind is NodeKind.DNN) != (self.model_ref is not None):
            raise ConfigError(f"node {self.id!r}: kind DNN requires model_ref and vice versa")
        if self.period_ms is not None and self.period_ms <= 0:
            raise ConfigError(f"node {self.id!r}: period_ms must be positive")
        if self.cost_hint_ms < 0:
            raise ConfigError(f"node {self.id!r}: cost_hint_ms must be non-negative")

    @property
    def is_source(self) -> bool:
        return self.period_ms is not None


@dataclass(frozen=True)
class FlowGraph:
    nodes: Mapping[str, ProgramNode]
    edges: tuple[tuple[str, str], ...]
    _succ: Mapping[str, tuple[str, ...]] = field(repr=False, compare=False, default=None)
    _pred: Mapping[str, tuple[str, ...]] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        succ: dict[str, list[str]] = {n: [] for n in self.nodes}
        pred: dict[str, list[str]] = {n: [] for n in self.nodes}
        for u, v in self.edges:
            succ[u].append(v)
            pred[v].append(u)
        object.__setattr__(self, "_succ", {k: tuple(sorted(v)) for k, v in succ.items()})
        object.__setattr__(self, "_pred", {k: tuple(sorted(v)) for k, v in pred.items()})

    def successors(self, node_id: str) -> tuple[str, ...]:
        return self._succ[node_id]

    def predecessors(self, node_id: str) -> tuple[str, ...]:
        return self._pred[node_id]

    def end_nodes(self) -> list[str]:
        return sorted(n for n, s in self._succ.items() if not s)

    def sources(self) -> list[str]:
        return sorted(n for n, node in self.nodes.items() if node.is_source)


@dataclass(frozen=True)
class Subgraph:
    end_node: str
    members: frozenset[str]
    topo_order: tuple[str, ...]
    priority: Mapping[str, int]
    nice: int = 0

    @property
    def id(self) -> str:
        return self.end_node


def build_graph(nodes: Sequence[ProgramNode], edges: Iterable[Sequence[str]]) -> FlowGraph:
    """Validate nodes and edges and return a `FlowGraph`.

    Duplicate edges are dropped silently.
    """
    by_id: dict[str, ProgramNode] = {}
    for node in nodes:
        if node.id in by_id:
            raise DuplicateNodeId(node.id)
        by_id[node.id] = node
    edge_set: set[tuple[str, str]] = set()
    for u, v in edges:
        for end in (u, v):
            if end not in by_id:
                raise UnknownEdgeEndpoint(end)
        if u == v:
            raise SelfLoop(u)
        edge_set.add((u, v))
    return FlowGraph(nodes=dict(sorted(by_id.items())), edges=tuple(sorted(edge_set)))


def _cycle_nodes(graph: FlowGraph, scope: Iterable[str] | None = None) -> set[str]:
    """Nodes of `scope` that Kahn's algorithm cannot remove, i.e. lie on or behind a cycle."""
    scope = set(graph.nodes if scope is None else scope)
    indeg = {n: sum(1 for p in graph.predecessors(n) if p in scope) for n in scope}
    queue = deque(n for n, d in indeg.items() if d == 0)
    while queue:
        n = queue.popleft()
        for s in graph.successors(n):
            if s in scope:
                indeg[s] -= 1
                if indeg[s] == 0:
                    queue.append(s)
    stuck = {n for n, d in indeg.items() if d > 0}
    # keep only nodes that can reach themselves, drop those merely downstream of a cycle
    on_cycle = set()
    for n in stuck:
        seen, stack = set(), [s for s in graph.successors(n) if s in stuck]
        while stack:
            x = stack.pop()
            if x == n:
                on_cycle.add(n)
                break
            if x in seen:
                continue
            seen.add(x)
            stack.extend(s for s in graph.successors(x) if s in stuck)
    return on_cycle


def check_acyclic(graph: FlowGraph) -> None:
    cyc = _cycle_nodes(graph)
    if cyc:
        raise CycleDetected(cyc)


def ancestors(graph: FlowGraph, node_id: str) -> set[str]:
    seen = {node_id}
    queue = deque([node_id])
    while queue:
        n = queue.popleft()
        for p in graph.predecessors(n):
            if p not in seen:
                seen.add(p)
                queue.append(p)
    return seen


def topological_order(members: Iterable[str], graph: FlowGraph) -> list[str]:
    """Kahn's algorithm over the induced subgraph, smallest id first among ready nodes."""
    scope = set(members)
    indeg = {n: sum(1 for p in graph.predecessors(n) if p in scope) for n in scope}
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for s in graph.successors(n):
            if s in scope:
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(heap, s)
    if len(order) != len(scope):
        raise CycleDetected(_cycle_nodes(graph, scope) or (scope - set(order)))
    return order


def assign_priorities(members: Iterable[str], graph: FlowGraph, end_node: str) -> dict[str, int]:
    """Longest path length (edge count) from each member to `end_node`."""
    scope = set(members)
    order = topological_order(scope, graph)
    prio: dict[str, int] = {}
    for n in reversed(order):
        succ = [prio[s] for s in graph.successors(n) if s in scope]
        prio[n] = 1 + max(succ) if succ else 0
    if prio.get(end_node) != 0:
        raise ValueError(f"{end_node!r} is not an end node of the member set")
    return dict(sorted(prio.items()))


def extract_subgraphs(graph: FlowGraph, nice: Mapping[str, int] | None = None) -> list[Subgraph]:
    """One `Subgraph` per out-degree-0 node, ordered by end-node id.

    Any cycle in the graph raises `CycleDetected`; no partial result is returned.
    """
    check_acyclic(graph)
    nice = nice or {}
    subs = []
    for end in graph.end_nodes():
        members = ancestors(graph, end)
        subs.append(
            Subgraph(
                end_node=end,
                members=frozenset(members),
                topo_order=tuple(topological_order(members, graph)),
                priority=assign_priorities(members, graph, end),
                nice=int(nice.get(end, 0)),
            )
        )
    return subs


def default_nice(graph: FlowGraph, control_node: str | None, others: int = 5) -> dict[str, int]:
    """Nice 0 for the subgraph ending at `control_node`, `others` for the rest.

    Without a control node every subgraph gets nice 0.
    """
    ends = graph.end_nodes()
    if control_node is None:
        return {e: 0 for e in ends}
    if control_node not in ends:
        raise ConfigError(f"control node {control_node!r} is not an end node")
    return {e: (0 if e == control_node else others) for e in ends}


@dataclass(frozen=True)
class GraphAnalysis:
    """Per-node view merged over all subgraphs.

    A node shared by several subgraphs keeps its highest priority and is
    accounted to the subgraph with the lowest nice (ties: smallest end id).
    """

    graph: FlowGraph
    subgraphs: tuple[Subgraph, ...]
    node_priority: Mapping[str, int]
    node_nice: Mapping[str, int]
    node_subgraph: Mapping[str, str]

    def subgraph(self, sub_id: str) -> Subgraph:
        for s in self.subgraphs:
            if s.id == sub_id:
                return s
        raise KeyError(sub_id)


def analyze(graph: FlowGraph, nice: Mapping[str, int] | None = None) -> GraphAnalysis:
    subs = extract_subgraphs(graph, nice)
    prio: dict[str, int] = {}
    owner: dict[str, tuple[int, str]] = {}
    for s in subs:
        for n in s.members:
            prio[n] = max(prio.get(n, 0), s.priority[n])
            key = (s.nice, s.id)
            if n not in owner or key < owner[n]:
                owner[n] = key
    return GraphAnalysis(
        graph=graph,
        subgraphs=tuple(subs),
        node_priority=dict(sorted(prio.items())),
        node_nice={n: k[0] for n, k in sorted(owner.items())},
        node_subgraph={n: k[1] for n, k in sorted(owner.items())},
    )


_NODE_FIELDS = {"id", "kind", "model_ref", "period_ms", "cost_hint_ms"}


def graph_from_dict(data: Mapping) -> FlowGraph:
    if not isinstance(data, Mapping) or set(data) != {"nodes", "edges"}:
        raise ConfigError("graph object must have exactly the keys 'nodes' and 'edges'")
    if not data["nodes"]:
        raise ConfigError("graph has no nodes")
    nodes = []
    for raw in data["nodes"]:
        extra = set(raw) - _NODE_FIELDS
        if extra:
            raise ConfigError(f"unknown node fields: {sorted(extra)}")
        if "id" not in raw:
            raise ConfigError("node without id")
        try:
            nodes.append(
                ProgramNode(
                    id=str(raw["id"]),
                    kind=NodeKind(raw.get("kind", "NonDNN")),
                    model_ref=raw.get("model_ref"),
                    period_ms=raw.get("period_ms"),
                    cost_hint_ms=float(raw.get("cost_hint_ms") or 0.0),
                )
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    edges = []
    for e in data["edges"]:
        if len(e) != 2:
            raise ConfigError(f"edge must be a [publisher, subscriber] pair: {e!r}")
        edges.append((str(e[0]), str(e[1])))
    return build_graph(nodes, edges)


def graph_to_dict(graph: FlowGraph) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "model_ref": n.model_ref,
                "period_ms": n.period_ms,
                "cost_hint_ms": n.cost_hint_ms,
            }
            for n in graph.nodes.values()
        ],
        "edges": [list(e) for e in graph.edges],
    }


def load_graph(path: str | Path) -> FlowGraph:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read graph file {path}: {exc}") from exc
    return graph_from_dict(data)
