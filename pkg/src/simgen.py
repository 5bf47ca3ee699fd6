"""
Simulation of the 20-node monoclonal-antibody (mAbs) production network.

Four unit operations run in sequence; each unit's CPPs and the previous unit's
CQAs feed the unit's output CQAs with a linear weight set by the association
level of the input/output pair:

    main fermentation  X1..X4          -> X5 impurities, X6 protein, X7 bioburden
    centrifuge         X8, X9, X5..X7  -> X10 impurities, X11 protein
    chromatography     X12, X13, X10, X11 -> X14 impurities, X15 protein, X16 bioburden
    filtration         X17, X18, X14..X16 -> X19 impurities, X20 protein

CPP moments come from operating ranges (mean at the midpoint, SD a quarter of
the width) and CQA conditional variances are back-engineered from target
marginal variances.

Functions:
- range_to_cpp_params(spec)
- back_engineer_v(graph, theta, targets)
- build_mabs_network(mapping=None, cqa_variance=None, residual_share=None)
- mabs_subgraphs(graph)
- generate_batches(graph, theta, n_complete, n_incomplete, subgraph, seed)
"""

import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .bn_model import NodeKind, Theta, build_graph
from .dataset import BatchDataset
from .exceptions import BnShapleyError, InfeasibleTarget, InvalidArgument, InvalidRange, SubgraphNotParentClosed
from .propagate import forward_sample, gamma_matrix_from_beta
from .utils import config

MABS_CONFIG = Path(__file__).resolve().parents[1] / "config" / "mabs_default.json"


class AssociationLevel(float, Enum):
    HIGH = 0.9
    MEDIUM = 0.6
    LOW = 0.3


@dataclass(frozen=True)
class RangeSpec:
    """Operating range [low, up] of one node, in the node's working units."""

    name: str
    low: float
    up: float
    label: str = ""
    unit: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.up)) or self.low >= self.up:
            raise InvalidRange(self.name, self.low, self.up)

    @property
    def mean(self):
        return (self.low + self.up) / 2.0

    @property
    def sd(self):
        return (self.up - self.low) / 4.0


@dataclass(frozen=True)
class UnitOperation:
    name: str
    cpps: tuple
    upstream: tuple
    outputs: tuple  # (node, AssociationLevel) pairs


MABS_UNITS = (
    UnitOperation(
        "main fermentation",
        ("X1", "X2", "X3", "X4"),
        (),
        (("X5", AssociationLevel.HIGH), ("X6", AssociationLevel.HIGH), ("X7", AssociationLevel.LOW)),
    ),
    UnitOperation(
        "centrifuge",
        ("X8", "X9"),
        ("X5", "X6", "X7"),
        (("X10", AssociationLevel.MEDIUM), ("X11", AssociationLevel.MEDIUM)),
    ),
    UnitOperation(
        "chromatography",
        ("X12", "X13"),
        ("X10", "X11"),
        (("X14", AssociationLevel.HIGH), ("X15", AssociationLevel.MEDIUM), ("X16", AssociationLevel.HIGH)),
    ),
    UnitOperation(
        "filtration",
        ("X17", "X18"),
        ("X14", "X15", "X16"),
        (("X19", AssociationLevel.LOW), ("X20", AssociationLevel.MEDIUM)),
    ),
)
MABS_RESPONSES = ("X19", "X20")


def range_to_cpp_params(spec):
    """Return (μ, v) = ((low + up) / 2, (up - low) / 4) for a CPP range."""
    if not isinstance(spec, RangeSpec):
        spec = RangeSpec(*spec)
    return spec.mean, spec.sd


def back_engineer_v(graph, theta, targets, eps=config.BACK_ENGINEER_EPS):
    """
    Solve for CQA conditional variances that hit target marginal SDs.

    Nodes are processed in topological order; each CQA gets
    v² = target² - (variance already propagated from upstream factors).

    Args:
        graph (ProcessGraph): the network.
        theta (Theta): supplies β and the CPP variances; CQA v² entries are ignored.
        targets (dict): CQA name -> target marginal SD.

    Returns:
        dict: CQA name -> v².

    Raises:
        InfeasibleTarget: upstream variance already reaches the target.
    """
    gamma = gamma_matrix_from_beta(graph, theta.beta_vector(graph))
    v2 = np.array(theta.v2, dtype=float)
    solved = {}
    for k in graph.cqa_nodes():
        name = graph.nodes[k].name
        target = float(targets[name]) ** 2
        upstream = sorted(graph.ancestors(k))
        propagated = float(np.sum(gamma[upstream, k] ** 2 * v2[upstream])) if upstream else 0.0
        residual = target - propagated
        if residual < eps:
            raise InfeasibleTarget(name, propagated - target)
        v2[k] = residual
        solved[name] = residual
    return solved


def load_mabs_config(path=None):
    with open(path or MABS_CONFIG, "r", encoding="utf-8") as handle:
        return json.load(handle)


def _mabs_structure():
    cpps = {name for unit in MABS_UNITS for name in unit.cpps}
    names = sorted(
        {name for unit in MABS_UNITS for name in unit.cpps + tuple(node for node, _ in unit.outputs)},
        key=lambda name: int(name[1:]),
    )
    node_specs = [
        (name, NodeKind.CPP if name in cpps else NodeKind.RESPONSE if name in MABS_RESPONSES else NodeKind.CQA)
        for name in names
    ]
    edges = []
    for unit in MABS_UNITS:
        for output, level in unit.outputs:
            for source in unit.cpps + unit.upstream:
                edges.append((source, output, level.value))
    return node_specs, edges


def _unit_shares(share):
    """Expand a scalar or per-unit residual share into {CQA name: share}."""
    if isinstance(share, dict):
        unknown = set(share) - {unit.name for unit in MABS_UNITS}
        if unknown:
            raise BnShapleyError(f"unknown unit operations in residual share: {sorted(unknown)}")
        per_unit = {unit.name: share.get(unit.name, config.MABS_RESIDUAL_SHARES[unit.name]) for unit in MABS_UNITS}
    else:
        per_unit = {unit.name: share for unit in MABS_UNITS}
    shares = {}
    for unit in MABS_UNITS:
        value = float(per_unit[unit.name])
        if not 0.0 < value < 1.0:
            raise BnShapleyError(f"residual share of {unit.name} must lie in (0, 1), got {value}")
        shares.update({node: value for node, _ in unit.outputs})
    return shares


def _residual_share_targets(graph, theta, shares):
    gamma = gamma_matrix_from_beta(graph, theta.beta_vector(graph))
    v2 = np.array(theta.v2, dtype=float)
    targets = {}
    for k in graph.cqa_nodes():
        name = graph.nodes[k].name
        upstream = sorted(graph.ancestors(k))
        propagated = float(np.sum(gamma[upstream, k] ** 2 * v2[upstream]))
        variance = propagated / (1.0 - shares[name])
        v2[k] = variance - propagated
        targets[name] = math.sqrt(variance)
    return targets


def build_mabs_network(mapping=None, cqa_variance=None, residual_share=None, config_path=None):
    """
    Build the mAbs process graph and its true coefficients θ^c.

    Args:
        mapping (str | dict | None): name of a CPP mapping in the configuration
            ("fig3" or "row-order"), or a {node: {"low", "up", ...}} override.
        cqa_variance (str | None): "residual_share" sets each CQA's residual to a
            fixed share of its marginal variance; "ranges" back-engineers against
            the CQA range table.
        residual_share (float | dict | None): the share used by "residual_share",
            one value for every CQA or a {unit operation: share} mapping.

    Returns:
        (ProcessGraph, Theta)

    Raises:
        InfeasibleTarget: with cqa_variance="ranges" on an infeasible range table.
    """
    settings = load_mabs_config(config_path)
    mapping = mapping or settings["default_mapping"]
    cpp_ranges = settings["mappings"][mapping] if isinstance(mapping, str) else mapping
    cqa_variance = cqa_variance or settings.get("cqa_variance", "residual_share")
    shares = _unit_shares(
        settings.get("residual_share", config.MABS_RESIDUAL_SHARES) if residual_share is None else residual_share
    )

    node_specs, edges = _mabs_structure()
    graph = build_graph(node_specs, [(parent, child) for parent, child, _ in edges])
    beta = {(graph.index(parent), graph.index(child)): weight for parent, child, weight in edges}

    ranges = {}
    for name, row in list(cpp_ranges.items()) + list(settings["cqa_ranges"].items()):
        ranges[name] = RangeSpec(name, float(row["low"]), float(row["up"]), row.get("label", ""), row.get("unit", ""))
    mu = np.array([ranges[name].mean for name in graph.names])
    v2 = np.array([ranges[name].sd ** 2 if graph.is_cpp(name) else 1.0 for name in graph.names])
    theta = Theta(mu, v2, beta)

    if cqa_variance == "ranges":
        targets = {graph.nodes[k].name: ranges[graph.nodes[k].name].sd for k in graph.cqa_nodes()}
    elif cqa_variance == "residual_share":
        targets = _residual_share_targets(graph, theta, shares)
    else:
        raise BnShapleyError(f"unknown cqa_variance mode {cqa_variance!r}")

    solved = back_engineer_v(graph, theta, targets)
    v2 = np.array([solved.get(name, v2[k]) for k, name in enumerate(graph.names)])
    theta = theta.replace(v2=v2).checked(graph)
    logging.info(
        "Built mAbs network: %s nodes, %s edges, mapping=%s, cqa_variance=%s.",
        len(graph), len(graph.edges), mapping if isinstance(mapping, str) else "custom", cqa_variance,
    )
    return graph, theta


def mabs_subgraphs(graph):
    """Parent-closed top sub-graphs ending after each of the first three units."""
    subgraphs, members = {}, []
    for unit in MABS_UNITS[:-1]:
        members = members + list(unit.cpps) + [node for node, _ in unit.outputs]
        subgraphs[unit.name] = sorted(members, key=graph.index)
    return subgraphs


def generate_batches(graph, theta, n_complete, n_incomplete=0, subgraph=None, seed=None):
    """
    Simulate complete batches plus batches observed only on a top sub-graph.

    Incomplete rows are drawn from the full model and then masked to `subgraph`.

    Raises:
        InvalidArgument: negative counts or no batch at all.
        SubgraphNotParentClosed: `subgraph` misses a parent of one of its nodes.
    """
    if n_complete < 0 or n_incomplete < 0 or n_complete + n_incomplete < 1:
        raise InvalidArgument("batches", f"bad batch counts {n_complete}, {n_incomplete}")
    if n_incomplete and subgraph is None:
        raise BnShapleyError("incomplete batches need a subgraph")
    dataset = forward_sample(graph, theta, n_complete + n_incomplete, seed=seed)
    if not n_incomplete:
        return dataset

    keep = {graph.index(k) for k in subgraph}
    missing = graph.missing_parents(keep)
    if missing:
        raise SubgraphNotParentClosed([graph.nodes[k].name for k in missing])
    observed = np.array(dataset.observed)
    scope = np.zeros(len(graph), dtype=bool)
    scope[sorted(keep)] = True
    observed[n_complete:] &= scope
    logging.info("Generated %s complete and %s incomplete batches (seed=%s).", n_complete, n_incomplete, seed)
    return BatchDataset(dataset.names, dataset.values, observed)
