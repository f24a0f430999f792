"""Stable conditioning sets, node splitting and retention of vulnerable variables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .graph import (
    CausalDag,
    GraphError,
    NodeKind,
    PathWitness,
    enumerate_active_paths,
    parse_dag,
    topological_order,
)

NULL = "∅"


@dataclass(frozen=True, order=True)
class CounterfactualNode:
    """``base`` with the additive contributions of ``intervened`` removed."""

    base: str
    intervened: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "intervened", tuple(sorted(set(self.intervened))))
        if not self.intervened:
            raise GraphError(f"counterfactual of {self.base!r} needs at least one intervened parent")

    @property
    def name(self) -> str:
        inner = ",".join(f"{p}={NULL}" for p in self.intervened)
        return f"{self.base}({inner})"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class StabilityReport:
    stable: frozenset[str]
    vulnerable: tuple[str, ...]
    audit: Mapping[str, PathWitness]


@dataclass(frozen=True)
class EstimationRecipe:
    """Fit ``node.base`` on ``fit_parents`` then subtract the ``subtract`` terms."""

    node: CounterfactualNode
    fit_parents: tuple[str, ...]
    subtract: tuple[str, ...]

    def __str__(self) -> str:
        return (f"{self.node.name}: fit {self.node.base} on {{{', '.join(self.fit_parents)}}}; "
                f"subtract fitted {', '.join(self.subtract)} contributions")


@dataclass(frozen=True)
class NormalizationPlan:
    final_set: frozenset[str]
    graph: CausalDag
    original: CausalDag
    splits: tuple[CounterfactualNode, ...]
    recipes: tuple[EstimationRecipe, ...]
    stability: StabilityReport
    trace: tuple[str, ...] = field(default=(), compare=False)

    @property
    def counterfactuals(self) -> dict[str, CounterfactualNode]:
        return {c.name: c for c in self.splits if c.name in self.final_set}

    @property
    def observed_features(self) -> list[str]:
        return sorted(n for n in self.final_set if n not in self.counterfactuals)

    def recipe(self, name: str) -> EstimationRecipe:
        for r in self.recipes:
            if r.node.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        """Machine-readable plan: the input DAG, one ``cf`` line per split, one ``keep`` line per member."""
        lines = [self.original.to_text().rstrip("\n")]
        lines += [f"cf {c.base} {','.join(c.intervened)}" for c in self.splits]
        lines += [f"keep {n}" for n in sorted(self.final_set)]
        return "\n".join(lines) + "\n"

    def report(self, trace: bool = True) -> str:
        out = ["stable set Z: {" + ", ".join(sorted(self.stability.stable)) + "}",
               "vulnerable V: [" + ", ".join(self.stability.vulnerable) + "]",
               "final set Z': {" + ", ".join(sorted(self.final_set)) + "}"]
        if self.recipes:
            out.append("estimation:")
            out += [f"  {r}" for r in self.recipes]
        if trace and self.trace:
            out.append("trace:")
            out += [f"  {t}" for t in self.trace]
        return "\n".join(out) + "\n"


def _paths_to(graph: CausalDag, node: str, conditioning: Iterable[str]) -> tuple[list[PathWitness], list[PathWitness]]:
    paths = enumerate_active_paths(graph, conditioning, end=node)
    return [p for p in paths if not p.unstable], [p for p in paths if p.unstable]


def stable_conditioning_set(graph: CausalDag, trace: list[str] | None = None) -> StabilityReport:
    """Drop every observed variable reachable from the target by an active unstable path.

    Paths are examined by increasing length k; at each k the active paths are
    computed once from the current set and then processed in order.  Removing
    a variable can open a new unstable path of length <= k to another member,
    so sweeps over k repeat until one removes nothing.
    """
    target = graph.target
    z = set(graph.observed) - {target}
    vulnerable: list[str] = []
    audit: dict[str, PathWitness] = {}
    sweep = 0
    changed = True
    while changed:
        changed = False
        sweep += 1
        for k in range(1, len(graph.kinds)):
            batch = [p for p in enumerate_active_paths(graph, z, max_length=k) if p.length == k and p.end in z]
            for path in batch:
                v = path.end
                if path.unstable and v in z:
                    z.discard(v)
                    vulnerable.append(v)
                    audit[v] = path
                    changed = True
                    if trace is not None:
                        extra = f", sweep {sweep}" if sweep > 1 else ""
                        trace.append(f"remove {v} (k={k}{extra}): unstable active path {path}")
    return StabilityReport(frozenset(z), tuple(vulnerable), audit)


def node_split(graph: CausalDag, node: str, intervened: Iterable[str]) -> CausalDag:
    """Insert ``node(P=∅)`` as a parent of ``node`` absorbing its non-intervened parents."""
    cf = CounterfactualNode(node, tuple(intervened))
    parents = set(graph.parents(node))
    for p in cf.intervened:
        if p not in parents:
            raise GraphError(f"cannot intervene on {p!r}: not a parent of {node!r}")
        if graph.kinds[p] is not NodeKind.OBSERVED:
            raise GraphError(f"cannot intervene on {p!r}: {graph.kinds[p].value} node")
    if cf.name in graph.kinds:
        raise GraphError(f"{cf.name!r} already present")
    inherited = sorted(parents - set(cf.intervened))
    return graph.with_changes(
        add_nodes={cf.name: NodeKind.COUNTERFACTUAL},
        remove_edges=[(x, node) for x in inherited],
        add_edges=[(x, cf.name) for x in inherited] + [(cf.name, node)],
    )


def collapse(graph: CausalDag) -> CausalDag:
    """Undo every node split, returning the factual graph."""
    bases: dict[str, str] = {}
    for name, kind in graph.kinds.items():
        if kind is NodeKind.COUNTERFACTUAL:
            (child,) = graph.children(name)
            bases[name] = child
    kinds = {n: k for n, k in graph.kinds.items() if n not in bases}
    edges = set()
    for a, b in graph.edges:
        if a in bases:
            continue
        edges.add((a, bases.get(b, b)))
    # nested splits: resolve chains of counterfactual parents
    while any(b in bases for _, b in edges):
        edges = {(a, bases.get(b, b)) for a, b in edges}
    return CausalDag.build(kinds, edges)


def _first_unstable(graph: CausalDag, members: set[str]) -> PathWitness | None:
    """First active unstable path from the target to any member, conditioning on all members."""
    for m in sorted(members):
        for p in enumerate_active_paths(graph, members, end=m):
            if p.unstable:
                return p
    return None


def _first_hop_parents(graph: CausalDag, paths: list[PathWitness]) -> set[str] | None:
    """Parents through which every path leaves ``v``; None if some path leaves via a child or a latent parent."""
    hops = set()
    for p in paths:
        prev = p.nodes[-2]
        if p.directions[-1] != "->" or graph.kinds[prev] is not NodeKind.OBSERVED:
            return None
        hops.add(prev)
    return hops


def retain_vulnerable(graph: CausalDag, report: StabilityReport, widen: bool = False,
                      trace: list[str] | None = None) -> NormalizationPlan:
    """Add back vulnerable variables, or counterfactual versions of them, that are safe to condition on.

    ``widen`` also intervenes on every other observed non-target parent of a
    split node (reduces variance of the counterfactual).
    """
    log = trace if trace is not None else []
    position = {n: i for i, n in enumerate(topological_order(graph))}
    order = sorted(report.vulnerable, key=lambda n: (position[n], n), reverse=True)
    current = graph
    final = set(report.stable)
    splits: list[CounterfactualNode] = []

    for v in order:
        trial = final | {v}
        stable, unstable = _paths_to(current, v, trial)
        if not stable:
            log.append(f"skip {v}: no active stable path")
            continue
        if not unstable:
            leak = _first_unstable(current, trial)
            if leak is not None:
                log.append(f"skip {v}: adding it activates unstable path {leak}")
                continue
            final.add(v)
            log.append(f"add {v}: no active unstable path (stable via {stable[0]})")
            continue
        hops = _first_hop_parents(current, unstable)
        if hops is None:
            bad = next(p for p in unstable if p.directions[-1] != "->"
                       or current.kinds[p.nodes[-2]] is not NodeKind.OBSERVED)
            log.append(f"skip {v}: unstable path {bad} does not enter through an observed parent")
            continue
        if widen:
            hops |= {p for p in current.parents(v) if current.kinds[p] is NodeKind.OBSERVED}
        cf = CounterfactualNode(v, tuple(hops))
        candidate = node_split(current, v, cf.intervened)
        leak = _first_unstable(candidate, final | {cf.name})
        if leak is not None:
            log.append(f"skip {v}: {cf.name} would have unstable active path {leak}")
            continue
        current = candidate
        splits.append(cf)
        final.add(cf.name)
        log.append(f"split {v} on {{{', '.join(cf.intervened)}}}: add {cf.name} "
                   f"(blocks {', '.join(str(p) for p in unstable)})")

    while True:
        dropped = sorted(z for z in final if not _paths_to(current, z, final)[0])
        if not dropped:
            break
        for z in dropped:
            final.discard(z)
            log.append(f"prune {z}: no active stable path")

    recipes = []
    for cf in splits:
        if cf.name not in final:
            continue
        fit = tuple(p for p in graph.parents(cf.base)
                    if graph.kinds[p] in (NodeKind.OBSERVED, NodeKind.TARGET))
        recipes.append(EstimationRecipe(cf, fit, cf.intervened))
    return NormalizationPlan(frozenset(final), current, graph, tuple(splits), tuple(recipes), report, tuple(log))


def normalize(graph: CausalDag, widen: bool = False) -> NormalizationPlan:
    log: list[str] = []
    report = stable_conditioning_set(graph, trace=log)
    return retain_vulnerable(graph, report, widen=widen, trace=log)


def parse_plan(text: str) -> tuple[CausalDag, CausalDag, frozenset[str]]:
    """Read a plan file back as (original graph, modified graph, final set)."""
    original = parse_dag(text)
    modified = original
    final = set()
    for raw in text.splitlines():
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "cf":
            if len(parts) != 3:
                raise GraphError(f"cannot parse {raw.strip()!r}")
            modified = node_split(modified, parts[1], parts[2].split(","))
        elif parts[0] == "keep":
            final.add(parts[1])
    unknown = final - set(modified.kinds)
    if unknown:
        raise GraphError(f"keep names undeclared node(s) {sorted(unknown)}")
    return original, modified, frozenset(final)
