"""Causal-loop-diagram DSL and model-coverage analyzer.

A causal loop diagram here is a directed signed graph of system
components. Rather than deriving a simulation model from it, each model
of the family gets its own copy of the diagram in which every node is
assigned the role it plays for that model (input, state variable,
output, or ignored) and every causal link is flagged as covered or not.
Superimposing those copies shows which parts of the system are covered
by which model, where models overlap (cross-validation candidates) and
which feedback loops no model maps completely.

Text format, one statement per line, ``#`` comments::

    node <id> <input|state|output|ignored> ["label"]
    edge <from> -> <to> <+|-> [covered] [inverse]

``inverse`` marks a causal link that a model implements against the
causal direction (e.g. inferring its source from observed data); the
edge keeps the system-truth direction, the flag records the treatment.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass

import networkx as nx

from .errors import InputError

ROLES = ("input", "state", "output", "ignored")


class CldParseError(InputError):
    """Malformed diagram source; message carries the line number."""


@dataclass(frozen=True)
class CldNode:
    id: str
    role: str
    label: str = ""


@dataclass(frozen=True)
class CldEdge:
    source: str
    target: str
    sign: str               # '+' reinforcing, '-' balancing
    covered: bool = False
    inverse: bool = False


@dataclass(frozen=True)
class CldGraph:
    nodes: tuple[CldNode, ...]
    edges: tuple[CldEdge, ...]

    def __post_init__(self):
        ids = [node.id for node in self.nodes]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise InputError(f"duplicate node id {dup!r}")
        known = set(ids)
        roles = {node.id: node.role for node in self.nodes}
        for node in self.nodes:
            if node.role not in ROLES:
                raise InputError(f"node {node.id!r}: unknown role {node.role!r}")
        pairs = [(e.source, e.target) for e in self.edges]
        if len(set(pairs)) != len(pairs):
            dup = next(p for p in pairs if pairs.count(p) > 1)
            raise InputError(f"duplicate edge {dup[0]}->{dup[1]}")
        for edge in self.edges:
            for endpoint in (edge.source, edge.target):
                if endpoint not in known:
                    raise InputError(f"edge {edge.source}->{edge.target}: "
                                     f"undeclared node {endpoint!r}")
            if edge.sign not in ("+", "-"):
                raise InputError(f"edge {edge.source}->{edge.target}: "
                                 f"sign must be + or -, got {edge.sign!r}")
            if edge.covered and roles[edge.source] == roles[edge.target] == "ignored":
                raise InputError(f"edge {edge.source}->{edge.target} is covered "
                                 "but connects two ignored nodes")

    def node(self, node_id: str) -> CldNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise InputError(f"unknown node {node_id!r}")

    def covered_nodes(self) -> frozenset:
        return frozenset(n.id for n in self.nodes if n.role != "ignored")

    def covered_edges(self) -> frozenset:
        return frozenset((e.source, e.target) for e in self.edges if e.covered)

    def edge_set(self) -> frozenset:
        return frozenset((e.source, e.target) for e in self.edges)


def parse_cld(text: str) -> CldGraph:
    """Parse diagram source; every error names its line."""
    nodes: list[CldNode] = []
    edges: list[CldEdge] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise CldParseError(f"line {lineno}: {exc}") from exc
        if not tokens:
            continue
        keyword = tokens[0]
        if keyword == "node":
            if len(tokens) < 3 or len(tokens) > 4:
                raise CldParseError(f"line {lineno}: expected 'node <id> <role> [\"label\"]'")
            node_id, role = tokens[1], tokens[2]
            if role not in ROLES:
                raise CldParseError(f"line {lineno}: unknown role {role!r}; "
                                    f"expected one of {ROLES}")
            if node_id in seen:
                raise CldParseError(f"line {lineno}: duplicate node id {node_id!r}")
            seen.add(node_id)
            nodes.append(CldNode(node_id, role, tokens[3] if len(tokens) == 4 else ""))
        elif keyword == "edge":
            if len(tokens) < 5 or tokens[2] != "->":
                raise CldParseError(
                    f"line {lineno}: expected 'edge <from> -> <to> <+|-> [covered] [inverse]'")
            source, target, sign = tokens[1], tokens[3], tokens[4]
            if sign not in ("+", "-"):
                raise CldParseError(f"line {lineno}: sign must be + or -, got {sign!r}")
            flags = tokens[5:]
            unknown = [f for f in flags if f not in ("covered", "inverse")]
            if unknown:
                raise CldParseError(f"line {lineno}: unknown edge flag {unknown[0]!r}")
            for endpoint in (source, target):
                if endpoint not in seen:
                    raise CldParseError(f"line {lineno}: edge references undeclared "
                                        f"node {endpoint!r}")
            edges.append(CldEdge(source, target, sign,
                                 covered="covered" in flags, inverse="inverse" in flags))
        else:
            raise CldParseError(f"line {lineno}: unknown statement {keyword!r}")
    try:
        return CldGraph(tuple(nodes), tuple(edges))
    except InputError as exc:
        raise CldParseError(str(exc)) from exc


def serialize_cld(graph: CldGraph) -> str:
    lines = []
    for node in graph.nodes:
        line = f"node {node.id} {node.role}"
        if node.label:
            line += f' "{node.label}"'
        lines.append(line)
    for edge in graph.edges:
        line = f"edge {edge.source} -> {edge.target} {edge.sign}"
        if edge.covered:
            line += " covered"
        if edge.inverse:
            line += " inverse"
        lines.append(line)
    return "\n".join(lines) + "\n"


def load_cld(path) -> CldGraph:
    with open(path) as fh:
        return parse_cld(fh.read())


# --- coverage analysis -------------------------------------------------------

@dataclass(frozen=True)
class ModelCoverage:
    covered_nodes: frozenset
    covered_edges: frozenset
    broken_loops: tuple         # system cycles with at least one edge this model misses


@dataclass(frozen=True)
class CoverageReport:
    model_names: tuple
    models: dict
    pairwise_node_overlap: dict
    pairwise_edge_overlap: dict
    uncovered_nodes: frozenset   # system nodes no model covers
    uncovered_edges: frozenset
    system_cycles: tuple
    broken_loops: tuple          # cycles broken in every model


def _canonical_cycle(cycle) -> tuple:
    pivot = min(range(len(cycle)), key=lambda i: cycle[i])
    return tuple(cycle[pivot:] + cycle[:pivot])


def system_cycles(system: CldGraph) -> tuple:
    """All simple cycles of the system graph, canonically rotated and sorted."""
    digraph = nx.DiGraph()
    digraph.add_nodes_from(node.id for node in system.nodes)
    digraph.add_edges_from((e.source, e.target) for e in system.edges)
    cycles = [_canonical_cycle(c) for c in nx.simple_cycles(digraph)]
    return tuple(sorted(cycles))


def _cycle_edges(cycle):
    return [(cycle[i], cycle[(i + 1) % len(cycle)]) for i in range(len(cycle))]


def coverage_report(system: CldGraph, models: dict) -> CoverageReport:
    """Superimpose model diagrams over the system diagram.

    ``models`` maps a model name to its diagram; every model node must
    exist in the system. A system cycle counts as broken for a model if
    at least one of its edges is not covered by that model, and as a
    family-level broken loop if that holds for every model.
    """
    system_node_ids = {node.id for node in system.nodes}
    for name, graph in models.items():
        stray = {node.id for node in graph.nodes} - system_node_ids
        if stray:
            raise InputError(f"model {name!r} uses nodes missing from the system "
                             f"diagram: {sorted(stray)}")

    cycles = system_cycles(system)
    coverages = {}
    for name, graph in models.items():
        covered_edges = graph.covered_edges()
        broken = tuple(cycle for cycle in cycles
                       if any(edge not in covered_edges for edge in _cycle_edges(cycle)))
        coverages[name] = ModelCoverage(covered_nodes=graph.covered_nodes(),
                                        covered_edges=covered_edges,
                                        broken_loops=broken)

    names = tuple(models)
    node_overlap = {}
    edge_overlap = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            node_overlap[(a, b)] = coverages[a].covered_nodes & coverages[b].covered_nodes
            edge_overlap[(a, b)] = coverages[a].covered_edges & coverages[b].covered_edges

    all_covered_nodes = frozenset().union(*(c.covered_nodes for c in coverages.values())) \
        if coverages else frozenset()
    all_covered_edges = frozenset().union(*(c.covered_edges for c in coverages.values())) \
        if coverages else frozenset()
    family_broken = tuple(cycle for cycle in cycles
                          if all(cycle in c.broken_loops for c in coverages.values())) \
        if coverages else cycles

    return CoverageReport(
        model_names=names,
        models=coverages,
        pairwise_node_overlap=node_overlap,
        pairwise_edge_overlap=edge_overlap,
        uncovered_nodes=frozenset(system_node_ids) - all_covered_nodes,
        uncovered_edges=system.edge_set() - all_covered_edges,
        system_cycles=cycles,
        broken_loops=family_broken,
    )


def report_to_json(report: CoverageReport) -> dict:
    """JSON-ready dict with deterministic ordering."""
    def edge_list(edges):
        return sorted(f"{a}->{b}" for a, b in edges)

    return {
        "models": {
            name: {
                "covered_nodes": sorted(coverage.covered_nodes),
                "covered_edges": edge_list(coverage.covered_edges),
                "broken_loops": [list(c) for c in coverage.broken_loops],
            }
            for name, coverage in report.models.items()
        },
        "pairwise_node_overlap": {
            f"{a}&{b}": sorted(nodes) for (a, b), nodes in report.pairwise_node_overlap.items()
        },
        "pairwise_edge_overlap": {
            f"{a}&{b}": edge_list(edges) for (a, b), edges in report.pairwise_edge_overlap.items()
        },
        "uncovered_nodes": sorted(report.uncovered_nodes),
        "uncovered_edges": edge_list(report.uncovered_edges),
        "system_cycles": [list(c) for c in report.system_cycles],
        "broken_loops": [list(c) for c in report.broken_loops],
        "nodes_covered_by": {
            node: sorted(name for name, cov in report.models.items()
                         if node in cov.covered_nodes)
            for node in sorted(set().union(*(c.covered_nodes for c in report.models.values()))
                               if report.models else set())
        },
    }


_DOT_NODE_COLORS = {"input": "darkgreen", "state": "black",
                    "output": "blue", "ignored": "lightgrey"}


def cld_to_dot(graph: CldGraph, name: str = "cld") -> str:
    """DOT rendering following the coloring convention."""
    lines = [f"digraph {name} {{"]
    for node in graph.nodes:
        color = _DOT_NODE_COLORS[node.role]
        label = node.label or node.id
        lines.append(f'  {node.id} [label="{label}", color={color}, fontcolor={color}];')
    for edge in graph.edges:
        color = "black" if edge.covered else "lightgrey"
        style = ", style=dashed" if edge.inverse else ""
        lines.append(f'  {edge.source} -> {edge.target} '
                     f'[label="{edge.sign}", color={color}{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
