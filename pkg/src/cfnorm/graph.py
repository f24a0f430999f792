"""Causal DAGs with typed nodes, d-separation and active-path enumeration.

Nodes are one of ``target``, ``observed``, ``unobserved``, ``selection`` or
``counterfactual`` (the last kind only appears in graphs produced by node
splitting).  The selection node is treated as conditioned in every query.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs or queries naming undeclared nodes."""


class NodeKind(str, enum.Enum):
    TARGET = "target"
    OBSERVED = "observed"
    UNOBSERVED = "unobserved"
    SELECTION = "selection"
    COUNTERFACTUAL = "counterfactual"


@dataclass(frozen=True)
class PathWitness:
    """A simple path starting at the target.

    ``directions[i]`` is ``"->"`` when the edge points from ``nodes[i]`` to
    ``nodes[i + 1]`` and ``"<-"`` otherwise.
    """

    nodes: tuple[str, ...]
    directions: tuple[str, ...]
    active: bool
    unstable: bool

    @property
    def length(self) -> int:
        return len(self.directions)

    @property
    def end(self) -> str:
        return self.nodes[-1]

    def __str__(self) -> str:
        parts = [self.nodes[0]]
        for arrow, node in zip(self.directions, self.nodes[1:]):
            parts.append(arrow)
            parts.append(node)
        return "".join(parts)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class CausalDag:
    """Immutable DAG over named, typed nodes.

    Construct with ``CausalDag.build`` to get validation; the raw constructor
    accepts anything so that ``validate`` can report problems.
    """

    kinds: Mapping[str, NodeKind]
    edges: tuple[tuple[str, str], ...] = ()
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    @classmethod
    def build(cls, nodes: Mapping[str, NodeKind | str] | Iterable[tuple[str, NodeKind | str]],
              edges: Iterable[tuple[str, str]] = (), check: bool = True) -> "CausalDag":
        items = nodes.items() if isinstance(nodes, Mapping) else nodes
        kinds: dict[str, NodeKind] = {}
        duplicates = []
        for name, kind in items:
            if name in kinds:
                duplicates.append(name)
            kinds[name] = NodeKind(kind)
        dag = cls(kinds=dict(sorted(kinds.items())), edges=tuple(sorted(edges)))
        if check:
            report = validate(dag)
            problems = [f"duplicate node {n!r}" for n in duplicates] + list(report.violations)
            if problems:
                raise GraphError("; ".join(problems))
        return dag

    @property
    def nodes(self) -> list[str]:
        return list(self.kinds)

    def kind(self, node: str) -> NodeKind:
        self._require(node)
        return self.kinds[node]

    def _require(self, *nodes: str) -> None:
        for node in nodes:
            if node not in self.kinds:
                raise GraphError(f"undeclared node {node!r}")

    @cached_property
    def _parents(self) -> dict[str, tuple[str, ...]]:
        parents: dict[str, list[str]] = {n: [] for n in self.kinds}
        for a, b in self.edges:
            parents.setdefault(b, []).append(a)
        return {n: tuple(sorted(set(ps))) for n, ps in parents.items()}

    @cached_property
    def _children(self) -> dict[str, tuple[str, ...]]:
        children: dict[str, list[str]] = {n: [] for n in self.kinds}
        for a, b in self.edges:
            children.setdefault(a, []).append(b)
        return {n: tuple(sorted(set(cs))) for n, cs in children.items()}

    @cached_property
    def _edge_set(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.edges)

    def parents(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._parents[node]

    def children(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._children[node]

    def neighbors(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(set(self.parents(node)) | set(self.children(node))))

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self._edge_set

    @property
    def target(self) -> str:
        targets = [n for n, k in self.kinds.items() if k is NodeKind.TARGET]
        if len(targets) != 1:
            raise GraphError(f"expected exactly one target node, found {len(targets)}")
        return targets[0]

    @property
    def selection(self) -> str | None:
        sel = [n for n, k in self.kinds.items() if k is NodeKind.SELECTION]
        return sel[0] if sel else None

    def nodes_of(self, *kinds: NodeKind) -> list[str]:
        return [n for n, k in self.kinds.items() if k in kinds]

    @property
    def observed(self) -> list[str]:
        """Observed variables including the target."""
        return self.nodes_of(NodeKind.OBSERVED, NodeKind.TARGET)

    @cached_property
    def _descendants(self) -> dict[str, frozenset[str]]:
        out: dict[str, frozenset[str]] = {}
        for node in reversed(topological_order(self)):
            acc: set[str] = set()
            for child in self._children[node]:
                acc.add(child)
                acc |= out[child]
            out[node] = frozenset(acc)
        return out

    def descendants(self, node: str) -> frozenset[str]:
        self._require(node)
        return self._descendants[node]

    def ancestors(self, nodes: Iterable[str]) -> set[str]:
        stack = list(nodes)
        self._require(*stack)
        seen = set(stack)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def with_changes(self, add_nodes: Mapping[str, NodeKind] = {}, remove_edges: Iterable[tuple[str, str]] = (),
                     add_edges: Iterable[tuple[str, str]] = ()) -> "CausalDag":
        dropped = set(remove_edges)
        kinds = dict(self.kinds)
        kinds.update(add_nodes)
        edges = [e for e in self.edges if e not in dropped] + list(add_edges)
        return CausalDag.build(kinds, edges)

    def to_text(self) -> str:
        lines = [f"node {n} {k.value}" for n, k in self.kinds.items()]
        lines += [f"edge {a} {b}" for a, b in sorted(self.edges)]
        return "\n".join(lines) + "\n"


def validate(graph: CausalDag) -> ValidationReport:
    """Check structural invariants; every violation is reported, none raised."""
    problems: list[str] = []
    kinds = graph.kinds
    seen_edges: set[tuple[str, str]] = set()
    for a, b in graph.edges:
        if a not in kinds or b not in kinds:
            missing = [x for x in (a, b) if x not in kinds]
            problems.append(f"edge {a}->{b}: undeclared node {', '.join(missing)}")
            continue
        if a == b:
            problems.append(f"edge {a}->{b}: self-loop")
        elif (a, b) in seen_edges:
            problems.append(f"edge {a}->{b}: duplicate edge")
        seen_edges.add((a, b))

    targets = [n for n, k in kinds.items() if k is NodeKind.TARGET]
    if len(targets) != 1:
        problems.append(f"expected exactly one target node, found {len(targets)}")

    valid_edges = [(a, b) for a, b in seen_edges if a != b]
    out_deg = {n: 0 for n in kinds}
    in_deg = {n: 0 for n in kinds}
    for a, b in valid_edges:
        out_deg[a] += 1
        in_deg[b] += 1
    for n, k in kinds.items():
        if k is NodeKind.UNOBSERVED and out_deg[n] < 2:
            problems.append(f"node {n}: unobserved node needs at least two children (has {out_deg[n]})")
        if k is NodeKind.SELECTION:
            if in_deg[n] == 0:
                problems.append(f"node {n}: selection node has no parents")
            if out_deg[n] > 0:
                problems.append(f"node {n}: selection node has children")
    if sum(k is NodeKind.SELECTION for k in kinds.values()) > 1:
        problems.append("more than one selection node")

    cycle = _find_cycle(kinds, valid_edges)
    if cycle:
        problems.append(f"directed cycle through {cycle}")
    return ValidationReport(tuple(problems))


def _find_cycle(kinds: Iterable[str], edges: Iterable[tuple[str, str]]) -> str | None:
    order, leftover = _kahn(kinds, edges)
    return min(leftover) if leftover else None


def _kahn(nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> tuple[list[str], set[str]]:
    nodes = list(nodes)
    indeg = {n: 0 for n in nodes}
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in set(edges):
        indeg[b] += 1
        children[a].append(b)
    heap = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    return order, set(nodes) - set(order)


def topological_order(graph: CausalDag) -> list[str]:
    """Kahn's algorithm with lexicographically smallest ready node first."""
    if "order" not in graph._cache:
        order, leftover = _kahn(graph.kinds, graph.edges)
        if leftover:
            raise GraphError(f"directed cycle through {min(leftover)}")
        graph._cache["order"] = order
    return list(graph._cache["order"])


def descendants(graph: CausalDag, node: str) -> frozenset[str]:
    return graph.descendants(node)


def _is_unstable_node(graph: CausalDag, node: str) -> bool:
    return graph.kinds[node] in (NodeKind.UNOBSERVED, NodeKind.SELECTION)


def _endpoint_ok(graph: CausalDag, node: str) -> bool:
    return graph.kinds[node] in (NodeKind.OBSERVED, NodeKind.COUNTERFACTUAL)


def _effective_conditioning(graph: CausalDag, conditioning: Iterable[str]) -> frozenset[str]:
    cond = set(conditioning)
    graph._require(*cond)
    sel = graph.selection
    if sel is not None:
        cond.add(sel)
    return frozenset(cond)


def _passes(graph: CausalDag, prev: str, mid: str, nxt: str, cond: frozenset[str]) -> bool:
    """Whether ``mid`` lets an active path through for the triple prev - mid - nxt."""
    collider = graph.has_edge(prev, mid) and graph.has_edge(nxt, mid)
    if collider:
        return mid in cond or not cond.isdisjoint(graph.descendants(mid))
    return mid not in cond


def _walk(graph: CausalDag, start: str, cond: frozenset[str], max_length: int) -> Iterator[tuple[str, ...]]:
    """Yield every active simple path from ``start`` with 1..max_length edges.

    Prefixes that are already blocked are not extended.
    """
    stack: list[tuple[str, ...]] = [(start,)]
    while stack:
        path = stack.pop()
        if len(path) > 1:
            yield path
        if len(path) - 1 >= max_length:
            continue
        last = path[-1]
        for nxt in reversed(graph.neighbors(last)):
            if nxt in path:
                continue
            if len(path) >= 2 and not _passes(graph, path[-2], last, nxt, cond):
                continue
            stack.append(path + (nxt,))


def _witness(graph: CausalDag, path: Sequence[str], active: bool = True) -> PathWitness:
    dirs = tuple("->" if graph.has_edge(a, b) else "<-" for a, b in zip(path, path[1:]))
    unstable = any(_is_unstable_node(graph, n) for n in path)
    return PathWitness(tuple(path), dirs, active, unstable)


def enumerate_active_paths(graph: CausalDag, conditioning: Iterable[str], max_length: int | None = None,
                           end: str | None = None) -> list[PathWitness]:
    """Active simple paths from the target to observed/counterfactual nodes.

    Sorted by length, then by node sequence.  ``end`` restricts the result to
    paths terminating at that node.
    """
    cond = _effective_conditioning(graph, conditioning)
    if max_length is None:
        max_length = len(graph.kinds) - 1
    if max_length < 1:
        raise GraphError("max_length must be at least 1")
    if end is not None:
        graph._require(end)
    out = []
    for path in _walk(graph, graph.target, cond, max_length):
        tail = path[-1]
        if end is not None and tail != end:
            continue
        if _endpoint_ok(graph, tail):
            out.append(_witness(graph, path))
    out.sort(key=lambda w: (w.length, w.nodes))
    return out


def d_separated(graph: CausalDag, a: str, b: str, conditioning: Iterable[str] = ()) -> bool:
    """True iff no active simple path joins ``a`` and ``b`` given ``conditioning``."""
    graph._require(a, b)
    if a == b:
        raise GraphError("d_separated needs two distinct nodes")
    cond = _effective_conditioning(graph, conditioning)
    for path in _walk(graph, a, cond, len(graph.kinds) - 1):
        if path[-1] == b:
            return False
    return True


def parse_dag(text: str) -> CausalDag:
    """Parse the line-oriented ``node``/``edge`` format.

    ``cf`` and ``keep`` lines (written for normalization plans) are ignored here.
    """
    nodes: list[tuple[str, str]] = []
    edges: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if head == "node" and len(parts) == 3:
            try:
                NodeKind(parts[2])
            except ValueError:
                raise GraphError(f"line {lineno}: unknown node kind {parts[2]!r}") from None
            nodes.append((parts[1], parts[2]))
        elif head == "edge" and len(parts) == 3:
            edges.append((parts[1], parts[2]))
        elif head in ("cf", "keep"):
            continue
        else:
            raise GraphError(f"line {lineno}: cannot parse {raw.strip()!r}")
    return CausalDag.build(nodes, edges)


def random_dag(rng: np.random.Generator, max_nodes: int = 10, max_unobserved: int = 2,
               allow_selection: bool = True, edge_prob: tuple[float, float] = (0.2, 0.5)) -> CausalDag:
    """Draw a random valid DAG (used by the property suites)."""
    n_sel = int(allow_selection and rng.random() < 0.5)
    n_core = int(rng.integers(2, max_nodes - n_sel + 1))
    names = [f"N{i}" for i in range(n_core)]
    rng.shuffle(names)
    p = rng.uniform(*edge_prob)
    edges = [(names[i], names[j]) for i in range(n_core) for j in range(i + 1, n_core) if rng.random() < p]
    out_deg = {n: 0 for n in names}
    for a, _ in edges:
        out_deg[a] += 1
    kinds = {n: NodeKind.OBSERVED for n in names}
    target = names[int(rng.integers(n_core))]
    kinds[target] = NodeKind.TARGET
    candidates = [n for n in names if n != target and out_deg[n] >= 2]
    rng.shuffle(candidates)
    for n in candidates[: int(rng.integers(0, max_unobserved + 1))]:
        kinds[n] = NodeKind.UNOBSERVED
    if n_sel:
        k = int(rng.integers(1, min(3, n_core) + 1))
        for parent in rng.choice(names, size=k, replace=False):
            edges.append((str(parent), "S"))
        kinds["S"] = NodeKind.SELECTION
    return CausalDag.build(kinds, edges)
