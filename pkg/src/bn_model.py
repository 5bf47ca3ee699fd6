"""
This module defines the process knowledge graph: node kinds, the validated
DAG, the coefficient container θ = (μ, v², β) and the input factors of a graph.

Classes:
- NodeKind / NodeId: node identity and role (CPP, CQA, RESPONSE).
- ProcessGraph: immutable DAG with a cached, declaration-stable topological order.
- Theta: per-node means and conditional variances, per-edge linear weights.
- InputFactor: a random input of the variance game (a CPP, a residual e_k, or a
  boundary node when a subgraph is analysed on its own).

Functions:
- build_graph(node_specs, edge_specs): validate and build a ProcessGraph.
- input_factors(graph): CPPs in topological order followed by residuals.
- validate_theta(graph, theta): structured list of problems, never raises.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import numpy as np

from .exceptions import (
    CycleDetected,
    DuplicateName,
    EdgeIntoCpp,
    GraphError,
    InvalidTheta,
    UnknownName,
)


class NodeKind(str, Enum):
    CPP = "CPP"
    CQA = "CQA"
    RESPONSE = "RESPONSE"

    @classmethod
    def parse(cls, value):
        if isinstance(value, NodeKind):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError as exc:
            raise GraphError(f"unknown node kind {value!r}") from exc


@dataclass(frozen=True, order=True)
class NodeId:
    index: int
    name: str

    def __str__(self):
        return self.name


class FactorKind(str, Enum):
    CPP = "cpp"
    RESIDUAL = "residual"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class InputFactor:
    """A random input W_k: a CPP node, the residual e_k of a CQA, or a boundary node."""

    kind: FactorKind
    node: NodeId

    @classmethod
    def cpp(cls, node):
        return cls(FactorKind.CPP, node)

    @classmethod
    def residual(cls, node):
        return cls(FactorKind.RESIDUAL, node)

    @classmethod
    def boundary(cls, node):
        return cls(FactorKind.BOUNDARY, node)

    @property
    def label(self):
        if self.kind is FactorKind.RESIDUAL:
            return f"e_{self.node.name}"
        return self.node.name

    def __str__(self):
        return self.label


class ProcessGraph:
    """
    Immutable DAG of process nodes.

    Attributes:
        nodes (tuple[NodeId]): Nodes in declaration order (index == position).
        kinds (tuple[NodeKind]): Kind of each node.
        edges (tuple[tuple[int, int]]): (parent, child) index pairs in declaration order.
        topo (tuple[int]): Topological order, ties broken by declaration order.

    Methods:
        index(name), node(key), parents(k), children(k), edge_index(edge),
        ancestors(k), descendants(k), missing_parents(nodes), is_parent_closed(nodes).
    """

    def __init__(self, nodes, kinds, edges, topo):
        self.nodes = tuple(nodes)
        self.kinds = tuple(kinds)
        self.edges = tuple(edges)
        self.topo = tuple(topo)
        self._by_name = {node.name: node for node in self.nodes}
        self._dag = _as_digraph(len(self.nodes), self.edges)
        self._edge_index = {edge: i for i, edge in enumerate(self.edges)}
        parents = [[] for _ in self.nodes]
        children = [[] for _ in self.nodes]
        for parent, child in self.edges:
            parents[child].append(parent)
            children[parent].append(child)
        self._parents = tuple(tuple(p) for p in parents)
        self._children = tuple(tuple(c) for c in children)
        self._rank = {k: r for r, k in enumerate(self.topo)}

    # --- lookups ---
    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, ProcessGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.kinds == other.kinds and self.edges == other.edges

    def __hash__(self):
        return hash((self.nodes, self.kinds, self.edges))

    def __repr__(self):
        return f"ProcessGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    @property
    def names(self):
        return tuple(node.name for node in self.nodes)

    def index(self, key):
        """Resolve a name, NodeId or integer index to an integer index."""
        if isinstance(key, NodeId):
            return key.index
        if isinstance(key, (int, np.integer)):
            if not 0 <= int(key) < len(self.nodes):
                raise UnknownName(str(key))
            return int(key)
        try:
            return self._by_name[key].index
        except KeyError as exc:
            raise UnknownName(key) from exc

    def node(self, key):
        return self.nodes[self.index(key)]

    def kind(self, key):
        return self.kinds[self.index(key)]

    def is_cpp(self, key):
        return self.kind(key) is NodeKind.CPP

    def parents(self, key):
        return self._parents[self.index(key)]

    def children(self, key):
        return self._children[self.index(key)]

    def rank(self, key):
        return self._rank[self.index(key)]

    def edge_index(self, edge):
        parent, child = edge
        return self._edge_index[(self.index(parent), self.index(child))]

    def edge_names(self, edge_idx):
        parent, child = self.edges[edge_idx]
        return self.nodes[parent].name, self.nodes[child].name

    def cpp_nodes(self):
        return tuple(k for k in self.topo if self.kinds[k] is NodeKind.CPP)

    def cqa_nodes(self):
        return tuple(k for k in self.topo if self.kinds[k] is not NodeKind.CPP)

    def responses(self):
        return tuple(k for k in self.topo if self.kinds[k] is NodeKind.RESPONSE)

    # --- reachability ---
    def ancestors(self, key):
        return nx.ancestors(self._dag, self.index(key))

    def descendants(self, key):
        return nx.descendants(self._dag, self.index(key))

    def missing_parents(self, nodes):
        """Return the parents of `nodes` that lie outside `nodes`."""
        members = {self.index(k) for k in nodes}
        return {p for k in members for p in self._parents[k] if p not in members}

    def is_parent_closed(self, nodes):
        return not self.missing_parents(nodes)

    def weight_matrix(self, theta):
        """Dense n x n matrix B with B[i, j] = beta_ij."""
        matrix = np.zeros((len(self.nodes), len(self.nodes)))
        for (parent, child), weight in zip(self.edges, theta.beta_vector(self)):
            matrix[parent, child] = weight
        return matrix


def _as_digraph(n_nodes, edges):
    dag = nx.DiGraph()
    dag.add_nodes_from(range(n_nodes))
    dag.add_edges_from(edges)
    return dag


def _topological_order(dag):
    # Ties go to the earliest declared node.
    return list(nx.lexicographical_topological_sort(dag, key=lambda k: k))


def build_graph(node_specs, edge_specs):
    """
    Validate node and edge declarations and build a ProcessGraph.

    Args:
        node_specs: sequence of (name, kind) pairs; kind is a NodeKind or its string.
        edge_specs: sequence of (parent name, child name) pairs.

    Returns:
        ProcessGraph: the validated graph with its topological order.

    Raises:
        DuplicateName, UnknownName, EdgeIntoCpp, CycleDetected
    """
    nodes, kinds, by_name = [], [], {}
    for position, (name, kind) in enumerate(node_specs):
        name = str(name).strip()
        if not name:
            raise GraphError("node names must be non-empty")
        if name in by_name:
            raise DuplicateName(name)
        by_name[name] = position
        nodes.append(NodeId(position, name))
        kinds.append(NodeKind.parse(kind))

    edges, seen = [], set()
    for parent_name, child_name in edge_specs:
        for name in (parent_name, child_name):
            if name not in by_name:
                raise UnknownName(name)
        parent, child = by_name[parent_name], by_name[child_name]
        if kinds[child] is NodeKind.CPP:
            raise EdgeIntoCpp((parent_name, child_name))
        if parent == child:
            raise CycleDetected([(parent_name, child_name)])
        if (parent, child) in seen:
            raise GraphError(f"edge {parent_name}->{child_name} declared twice")
        seen.add((parent, child))
        edges.append((parent, child))

    dag = _as_digraph(len(nodes), edges)
    try:
        order = _topological_order(dag)
    except nx.NetworkXUnfeasible as exc:
        cycle = nx.find_cycle(dag)
        raise CycleDetected([(nodes[p].name, nodes[c].name) for p, c in cycle]) from exc
    return ProcessGraph(nodes, kinds, edges, order)


def input_factors(graph):
    """CPPs in topological order followed by the residual of every CQA/RESPONSE node."""
    cpps = [InputFactor.cpp(graph.nodes[k]) for k in graph.cpp_nodes()]
    residuals = [InputFactor.residual(graph.nodes[k]) for k in graph.cqa_nodes()]
    return cpps + residuals


@dataclass(frozen=True, eq=False)
class Theta:
    """
    Coefficient set θ = (μ, v², β).

    `mu` and `v2` are per-node arrays indexed by NodeId.index; `beta` maps
    (parent index, child index) to the linear weight β_jk.
    """

    mu: np.ndarray
    v2: np.ndarray
    beta: dict = field(default_factory=dict)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        v2 = np.array(self.v2, dtype=float)
        mu.setflags(write=False)
        v2.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "v2", v2)
        object.__setattr__(self, "beta", {(int(p), int(c)): float(b) for (p, c), b in dict(self.beta).items()})

    @classmethod
    def from_arrays(cls, graph, mu, v2, beta):
        """Build from a beta vector aligned with `graph.edges`."""
        beta = np.asarray(beta, dtype=float)
        return cls(mu, v2, {edge: float(w) for edge, w in zip(graph.edges, beta)})

    @classmethod
    def from_names(cls, graph, mu, v2, beta):
        """Build from name-keyed mappings: mu/v2 {name: value}, beta {(parent, child): value}."""
        mu_arr = np.array([mu[name] for name in graph.names], dtype=float)
        v2_arr = np.array([v2[name] for name in graph.names], dtype=float)
        weights = {(graph.index(p), graph.index(c)): w for (p, c), w in beta.items()}
        return cls(mu_arr, v2_arr, weights)

    def beta_vector(self, graph):
        """Weights aligned with `graph.edges`; a missing edge reads as 0.0."""
        return np.array([self.beta.get(edge, 0.0) for edge in graph.edges], dtype=float)

    def beta_of(self, graph, parent, child):
        return self.beta[(graph.index(parent), graph.index(child))]

    def replace(self, mu=None, v2=None, beta=None):
        return Theta(
            self.mu if mu is None else mu,
            self.v2 if v2 is None else v2,
            self.beta if beta is None else beta,
        )

    def scaled(self, factor):
        """θ with every conditional standard deviation multiplied by `factor`."""
        return self.replace(v2=self.v2 * factor**2)

    def checked(self, graph):
        """Return self, or raise InvalidTheta listing every problem."""
        result = validate_theta(graph, self)
        if not result.ok:
            raise InvalidTheta(result.issues)
        return self

    def to_dict(self, graph):
        return {
            "mu": {name: float(self.mu[k]) for k, name in enumerate(graph.names)},
            "v2": {name: float(self.v2[k]) for k, name in enumerate(graph.names)},
            "beta": [
                {"parent": graph.nodes[p].name, "child": graph.nodes[c].name, "beta": self.beta[(p, c)]}
                for p, c in graph.edges
                if (p, c) in self.beta
            ],
        }

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return (
            np.array_equal(self.mu, other.mu)
            and np.array_equal(self.v2, other.v2)
            and self.beta == other.beta
        )


class IssueKind(str, Enum):
    NON_POSITIVE_VARIANCE = "NonPositiveVariance"
    MISSING_BETA = "MissingBeta"
    EXTRA_BETA = "ExtraBeta"
    NON_FINITE_VALUE = "NonFiniteValue"
    SHAPE_MISMATCH = "ShapeMismatch"


@dataclass(frozen=True)
class ThetaIssue:
    kind: IssueKind
    where: object = None

    def __str__(self):
        return f"{self.kind.value}({self.where})"


@dataclass(frozen=True)
class ThetaValidation:
    issues: tuple = ()

    @property
    def ok(self):
        return not self.issues

    def __bool__(self):
        return self.ok

    def kinds(self):
        return [issue.kind for issue in self.issues]


def validate_theta(graph, theta):
    """Check θ against the graph and return every problem found."""
    issues = []
    n_nodes = len(graph)
    if theta.mu.shape != (n_nodes,) or theta.v2.shape != (n_nodes,):
        issues.append(ThetaIssue(IssueKind.SHAPE_MISMATCH, (theta.mu.shape, theta.v2.shape)))
        return ThetaValidation(tuple(issues))

    for k in range(n_nodes):
        if not math.isfinite(theta.mu[k]):
            issues.append(ThetaIssue(IssueKind.NON_FINITE_VALUE, f"mu[{graph.nodes[k].name}]"))
        if not math.isfinite(theta.v2[k]):
            issues.append(ThetaIssue(IssueKind.NON_FINITE_VALUE, f"v2[{graph.nodes[k].name}]"))
        elif theta.v2[k] <= 0.0:
            issues.append(ThetaIssue(IssueKind.NON_POSITIVE_VARIANCE, k))

    declared = set(graph.edges)
    for edge in graph.edges:
        if edge not in theta.beta:
            issues.append(ThetaIssue(IssueKind.MISSING_BETA, edge))
        elif not math.isfinite(theta.beta[edge]):
            issues.append(ThetaIssue(IssueKind.NON_FINITE_VALUE, f"beta{edge}"))
    for edge in sorted(theta.beta):
        if edge not in declared:
            issues.append(ThetaIssue(IssueKind.EXTRA_BETA, edge))
    return ThetaValidation(tuple(issues))
