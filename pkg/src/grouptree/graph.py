"""Endpoint constraint graph, shortest-path distances and endpoint covariance."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, shortest_path

from .config import ModelConfig
from .model import ActivityLabel, ActivityTree, walk


class Side(str, Enum):
    START = "START"
    END = "END"


class EdgeKind(str, Enum):
    TEMPORAL = "TEMPORAL"
    TRANSITIONAL = "TRANSITIONAL"
    COMPOSITIONAL = "COMPOSITIONAL"


@dataclass(frozen=True)
class EndpointId:
    node_id: int
    side: Side

    def __str__(self):
        return f"x{self.node_id}{'s' if self.side is Side.START else 'e'}"


@dataclass(frozen=True)
class Edge:
    u: EndpointId
    v: EndpointId
    kind: EdgeKind
    weight: float


@dataclass(frozen=True)
class ConstraintGraph:
    nodes: tuple[EndpointId, ...]
    edges: tuple[Edge, ...]

    def index(self) -> dict[EndpointId, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    def to_dot(self) -> str:
        style = {EdgeKind.TEMPORAL: "solid", EdgeKind.TRANSITIONAL: "dashed", EdgeKind.COMPOSITIONAL: "dotted"}
        lines = ["graph constraints {"]
        lines += [f'  "{n}";' for n in self.nodes]
        for e in self.edges:
            lines.append(f'  "{e.u}" -- "{e.v}" [style={style[e.kind]}, label="{e.weight:.4g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EndpointCovariance:
    matrix: np.ndarray
    ordering: tuple[EndpointId, ...]
    min_eig_raw: float


def temporal_weight(label: ActivityLabel, duration: int, config: ModelConfig) -> float:
    return config.sigma[label] * duration ** config.temporal_exponent


def build_constraint_graph(tree: ActivityTree, config: ModelConfig) -> ConstraintGraph:
    leaves = tree.leaves()
    nodes = []
    edges = []
    for leaf in leaves:
        s, e = EndpointId(leaf.id, Side.START), EndpointId(leaf.id, Side.END)
        nodes += [s, e]
        edges.append(Edge(s, e, EdgeKind.TEMPORAL, temporal_weight(leaf.label, leaf.duration, config)))

    for a in leaves:
        for b in leaves:
            if a.end + 1 == b.start and a.participants & b.participants:
                edges.append(Edge(EndpointId(a.id, Side.END), EndpointId(b.id, Side.START), EdgeKind.TRANSITIONAL, 0.0))

    for _, node in walk(tree.root):
        if node.label is not ActivityLabel.MEET:
            continue
        ends = [n.id for _, n in walk(node) if n.is_physical and n.end == node.end]
        for i, u in enumerate(ends):
            for v in ends[i + 1:]:
                edges.append(Edge(EndpointId(u, Side.END), EndpointId(v, Side.END), EdgeKind.COMPOSITIONAL, 0.0))
    return ConstraintGraph(tuple(nodes), tuple(edges))


def adjacency(graph: ConstraintGraph) -> np.ndarray:
    """Dense weight matrix with +inf for missing edges (parallel edges keep the minimum)."""
    idx = graph.index()
    n = len(graph.nodes)
    w = np.full((n, n), np.inf)
    for e in graph.edges:
        if e.weight < 0:
            raise ValueError("edge weights must be nonnegative")
        i, j = idx[e.u], idx[e.v]
        if e.weight < w[i, j]:
            w[i, j] = w[j, i] = e.weight
    return w


def distance_matrix(graph: ConstraintGraph) -> np.ndarray:
    """All-pairs shortest-path lengths; unreachable pairs are +inf."""
    w = adjacency(graph)
    if w.size == 0:
        return w
    np.fill_diagonal(w, np.inf)
    sparse = csgraph_from_dense(w, null_value=np.inf)
    d = shortest_path(sparse, method="D", directed=False)
    np.fill_diagonal(d, 0.0)
    return d


def endpoint_covariance(d: np.ndarray, lam: float, ordering=(), jitter: float = 1e-8) -> EndpointCovariance:
    """Apply lam * exp(-d^2) entrywise, then repair to a PSD matrix.

    Negative eigenvalues are floored at zero and lam * jitter is added to the
    diagonal. The raw minimum eigenvalue is kept for diagnostics.
    """
    d = np.asarray(d, dtype=float)
    with np.errstate(over="ignore"):
        phi = lam * np.exp(-np.square(d))
    phi = 0.5 * (phi + phi.T)
    if phi.size == 0:
        return EndpointCovariance(phi, tuple(ordering), 0.0)
    vals, vecs = np.linalg.eigh(phi)
    min_eig = float(vals[0])
    if min_eig < 0:
        phi = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        phi = 0.5 * (phi + phi.T)
    phi = phi + lam * jitter * np.eye(len(phi))
    return EndpointCovariance(phi, tuple(ordering), min_eig)


def tree_endpoint_covariance(tree: ActivityTree, config: ModelConfig) -> EndpointCovariance:
    graph = build_constraint_graph(tree, config)
    return endpoint_covariance(distance_matrix(graph), config.lam, graph.nodes)
