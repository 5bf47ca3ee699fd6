"""
Variance-based Shapley sensitivity for linear-Gaussian process networks.

With Y = μ_Y + Σ_k γ_k W_k and the remaining-variance cost

    c(J) = Var(Σ_{k∈J} γ_k W_k) = Σ_{k,ℓ∈J} γ_k γ_ℓ Cov(W_k, W_ℓ)

the Shapley value of W_k has the closed form

    Sh_k = γ_k² Var(W_k) + Σ_{ℓ≠k} γ_k γ_ℓ Cov(W_k, W_ℓ)

which sums to Var(Y). Under independent inputs c(J) = E[Var[Y | W_{-J}]] and
Sh_k = γ_k² v_k². Shapley values may be negative under correlated inputs; they
are reported with their sign.

Functions:
- cost_remaining_variance(graph, theta, output, subset, cov)
- sv_closed_form(graph, theta, output, cov)
- sv_bruteforce(cost, n_factors, dual=False)
- subgraph_analysis(graph, theta, nodes, output, source, data)
- criticality(report, factor)
- mc_cost_remaining_variance(graph, theta, output, subset, n_draws, seed)
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from . import propagate
from .bn_model import FactorKind, InputFactor, NodeKind, input_factors
from .exceptions import (
    BnShapleyError,
    NotPositiveSemidefinite,
    OutputNotInSubgraph,
    TargetIsCpp,
    TooManyFactors,
    UnknownFactor,
)
from .utils import config
from .utils.rng import get_rng


class CovarianceMode(str, Enum):
    INDEPENDENT = "independent"
    MODEL_PROPAGATED = "model"
    USER_SUPPLIED = "user"
    DATA = "data"


@dataclass(frozen=True, eq=False)
class InputCovariance:
    """How the covariance among input factors is obtained."""

    mode: CovarianceMode = CovarianceMode.INDEPENDENT
    matrix: np.ndarray = None

    @classmethod
    def independent(cls):
        return cls(CovarianceMode.INDEPENDENT)

    @classmethod
    def model(cls):
        return cls(CovarianceMode.MODEL_PROPAGATED)

    @classmethod
    def user(cls, matrix):
        matrix = np.array(matrix, dtype=float)
        check_covariance(matrix)
        return cls(CovarianceMode.USER_SUPPLIED, matrix)


def check_covariance(matrix, tolerance=config.PSD_TOLERANCE):
    """Require a symmetric matrix with a positive diagonal and eigenvalues >= -tolerance."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise BnShapleyError(f"covariance must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        raise BnShapleyError("covariance must be symmetric")
    if np.any(np.diag(matrix) <= 0.0):
        raise BnShapleyError("covariance diagonal must be positive")
    smallest = float(np.linalg.eigvalsh(matrix).min())
    if smallest < -tolerance:
        raise NotPositiveSemidefinite(smallest)
    return matrix


@dataclass(frozen=True, eq=False)
class SvReport:
    """
    Shapley decomposition of Var(output) over input factors.

    Attributes:
        output (NodeId): The analysed node.
        factors (tuple[InputFactor]): Inputs, in report order.
        shapley (np.ndarray): Sh per factor (units²).
        criticality (np.ndarray): Sh / total_variance per factor.
        total_variance (float): Var(output) under the input covariance used.
        covariance_mode (str): How input covariance was obtained.
        notes (tuple[str]): Caveats attached to the numbers.
        meta (dict): Replay metadata (subgraph, data rows, posterior draw index, ...).
    """

    output: object
    factors: tuple
    shapley: np.ndarray
    criticality: np.ndarray
    total_variance: float
    covariance_mode: str = CovarianceMode.INDEPENDENT.value
    notes: tuple = ()
    meta: dict = field(default_factory=dict)

    def _position(self, factor):
        for position, candidate in enumerate(self.factors):
            if candidate == factor or candidate.label == factor:
                return position
        raise UnknownFactor(factor)

    def shapley_of(self, factor):
        return float(self.shapley[self._position(factor)])

    def criticality_of(self, factor):
        return float(self.criticality[self._position(factor)])

    def ranking(self):
        """Factors sorted by decreasing criticality (stable on ties)."""
        order = sorted(range(len(self.factors)), key=lambda i: -self.criticality[i])
        return [self.factors[i] for i in order]

    def to_frame(self):
        return pd.DataFrame(
            {
                "factor": [f.label for f in self.factors],
                "kind": [f.kind.value for f in self.factors],
                "shapley": self.shapley,
                "criticality": self.criticality,
            }
        )

    def to_dict(self):
        return {
            "kind": "sv_report",
            "output": self.output.name,
            "total_variance": float(self.total_variance),
            "covariance_mode": self.covariance_mode,
            "notes": list(self.notes),
            "meta": dict(self.meta),
            "factors": [
                {"factor": f.label, "kind": f.kind.value, "node": f.node.name, "shapley": float(s), "criticality": float(p)}
                for f, s, p in zip(self.factors, self.shapley, self.criticality)
            ],
        }

    @classmethod
    def from_dict(cls, graph, record):
        factors = tuple(InputFactor(FactorKind(row["kind"]), graph.node(row["node"])) for row in record["factors"])
        return cls(
            output=graph.node(record["output"]),
            factors=factors,
            shapley=np.array([row["shapley"] for row in record["factors"]], dtype=float),
            criticality=np.array([row["criticality"] for row in record["factors"]], dtype=float),
            total_variance=float(record["total_variance"]),
            covariance_mode=record.get("covariance_mode", CovarianceMode.INDEPENDENT.value),
            notes=tuple(record.get("notes", ())),
            meta=dict(record.get("meta", {})),
        )


def _resolve_factor(factors, factor):
    for position, candidate in enumerate(factors):
        if candidate == factor or candidate.label == factor:
            return position
    raise UnknownFactor(factor)


def _factor_covariance(graph, theta, factors, cov):
    if cov.mode is CovarianceMode.USER_SUPPLIED:
        if cov.matrix.shape != (len(factors), len(factors)):
            raise BnShapleyError(
                f"user covariance has shape {cov.matrix.shape}, expected {(len(factors), len(factors))}"
            )
        return cov.matrix
    # the full graph's factors are independent by construction
    return np.diag(propagate.factor_variances(graph, theta, factors))


def _output_gamma(graph, theta, output, factors):
    k = graph.index(output)
    if graph.is_cpp(k):
        raise TargetIsCpp(graph.nodes[k].name)
    column = propagate.gamma_matrix(graph, theta)[:, k]
    return k, np.array([column[f.node.index] for f in factors])


def cost_remaining_variance(graph, theta, output, subset, cov=None):
    """
    Remaining-variance cost c(J) for a coalition J of input factors.

    c(∅) = 0 and c(all factors) = Var(output).

    Raises:
        UnknownFactor: if J names something that is not an input factor.
        TargetIsCpp: if `output` is a CPP.
    """
    cov = cov or InputCovariance.independent()
    factors = input_factors(graph)
    positions = sorted({_resolve_factor(factors, f) for f in subset})
    _, gamma = _output_gamma(graph, theta, output, factors)
    if not positions:
        return 0.0
    sigma = _factor_covariance(graph, theta, factors, cov)
    weights = gamma[positions]
    return float(weights @ sigma[np.ix_(positions, positions)] @ weights)


def _decompose(output, factors, gamma, sigma, mode, notes=(), meta=None):
    contributions = gamma * (sigma @ gamma)
    total = math.fsum(contributions)
    criticality = contributions / total if total != 0.0 else np.full(len(factors), np.nan)
    return SvReport(
        output=output,
        factors=tuple(factors),
        shapley=contributions,
        criticality=criticality,
        total_variance=total,
        covariance_mode=mode.value,
        notes=tuple(notes),
        meta=dict(meta or {}),
    )


def sv_closed_form(graph, theta, output, cov=None):
    """
    Shapley value of every input factor for Var(output), in closed form.

    Returns:
        SvReport over `input_factors(graph)`; shapley sums to total_variance.
    """
    cov = cov or InputCovariance.independent()
    factors = input_factors(graph)
    k, gamma = _output_gamma(graph, theta, output, factors)
    sigma = _factor_covariance(graph, theta, factors, cov)
    notes = ()
    if cov.mode is CovarianceMode.USER_SUPPLIED:
        notes = ("user-supplied input covariance; Shapley values may be negative",)
    return _decompose(graph.nodes[k], factors, gamma, sigma, cov.mode, notes)


def criticality(report, factor):
    """Sh / Var(output) for one factor of a report."""
    return report.criticality_of(factor)


def _shapley_weights(n_factors):
    return np.array(
        [
            math.factorial(size) * math.factorial(n_factors - size - 1) / math.factorial(n_factors)
            for size in range(n_factors)
        ]
    )


def sv_bruteforce(cost, n_factors, dual=False):
    """
    Exact Shapley values by enumerating all 2^K coalitions.

    Args:
        cost (callable): maps a frozenset of factor positions to a real payoff.
        n_factors (int): K, at most MAX_BRUTEFORCE_FACTORS.
        dual (bool): use the dual game c'(J) = c(N) - c(N \\ J); same Shapley values.

    Returns:
        np.ndarray: Shapley value per factor position.
    """
    if n_factors > config.MAX_BRUTEFORCE_FACTORS:
        raise TooManyFactors(n_factors, config.MAX_BRUTEFORCE_FACTORS)
    if n_factors == 0:
        return np.zeros(0)
    n_masks = 1 << n_factors
    members = [frozenset(k for k in range(n_factors) if mask >> k & 1) for mask in range(n_masks)]
    payoff = np.array([cost(members[mask]) for mask in range(n_masks)], dtype=float)
    if dual:
        full = n_masks - 1
        payoff = payoff[full] - payoff[full ^ np.arange(n_masks)]

    masks = np.arange(n_masks)
    sizes = np.array([len(m) for m in members])
    weights = _shapley_weights(n_factors)
    values = np.empty(n_factors)
    for k in range(n_factors):
        bit = 1 << k
        without = masks[(masks & bit) == 0]
        increments = weights[sizes[without]] * (payoff[without | bit] - payoff[without])
        values[k] = math.fsum(increments)
    return values


# === Subgraph analysis ===
def _subgraph_inputs(graph, members):
    node_inputs, internal = [], []
    for k in graph.topo:
        if k not in members:
            continue
        inside = [p for p in graph.parents(k) if p in members]
        if inside:
            internal.append(k)
        else:
            node_inputs.append(k)
    outside = {p for k in internal for p in graph.parents(k) if p not in members}
    node_inputs = sorted(set(node_inputs) | outside, key=graph.rank)
    return node_inputs, internal


def subgraph_analysis(graph, theta, nodes, output, source="model", data=None):
    """
    Shapley decomposition of Var(output) within a subgraph.

    Nodes of the subgraph with no parent inside it, and outside parents of the
    remaining nodes, act as (possibly correlated) inputs; every node with an
    inside parent contributes its residual.

    Args:
        nodes: subgraph node names or indices.
        output: node of the subgraph to analyse.
        source: "model" (covariance from θ), "data" (sample covariance of the node
            inputs over complete rows of `data`) or "independent".
        data (BatchDataset): required when source == "data".

    Raises:
        OutputNotInSubgraph, TargetIsCpp
    """
    members = {graph.index(k) for k in nodes}
    out = graph.index(output)
    if out not in members:
        raise OutputNotInSubgraph(graph.nodes[out].name)
    if graph.is_cpp(out):
        raise TargetIsCpp(graph.nodes[out].name)

    node_inputs, internal = _subgraph_inputs(graph, members)
    factors = [
        InputFactor.cpp(graph.nodes[k]) if graph.kinds[k] is NodeKind.CPP else InputFactor.boundary(graph.nodes[k])
        for k in node_inputs
    ] + [InputFactor.residual(graph.nodes[k]) for k in internal]
    n_factors = len(factors)
    position = {k: i for i, k in enumerate(node_inputs)}
    residual_position = {k: len(node_inputs) + i for i, k in enumerate(internal)}

    # local path weights of every subgraph node over the subgraph inputs
    coefficients = {k: np.eye(n_factors)[position[k]] for k in node_inputs}
    for k in internal:
        row = np.zeros(n_factors)
        row[residual_position[k]] = 1.0
        for parent in graph.parents(k):
            row += theta.beta[(parent, k)] * coefficients[parent]
        coefficients[k] = row
    gamma = coefficients[out]

    # each input as a combination of the full graph's independent factors
    full_gamma = propagate.gamma_matrix(graph, theta)
    loadings = np.zeros((len(graph), n_factors))
    for k, i in position.items():
        loadings[:, i] = full_gamma[:, k]
    for k, i in residual_position.items():
        loadings[k, i] = 1.0
    sigma = loadings.T @ (theta.v2[:, None] * loadings)

    notes, meta = [], {"subgraph": sorted(graph.nodes[k].name for k in members), "source": source}
    if source == "model":
        mode = CovarianceMode.MODEL_PROPAGATED
    elif source == "independent":
        mode = CovarianceMode.INDEPENDENT
        sigma = np.diag(np.diag(sigma))
    elif source == "data":
        if data is None:
            raise BnShapleyError("source='data' needs a dataset")
        mode = CovarianceMode.DATA
        block, n_rows = data.sample_covariance(node_inputs)
        if n_rows < 2:
            raise BnShapleyError("fewer than 2 rows observe every subgraph input")
        residual_sigma = np.diag(np.diag(sigma)[len(node_inputs):])
        sigma = np.zeros((n_factors, n_factors))
        sigma[: len(node_inputs), : len(node_inputs)] = block
        sigma[len(node_inputs):, len(node_inputs):] = residual_sigma
        notes.append(f"input covariance estimated by sample covariance over {n_rows} rows")
        meta["data_rows"] = n_rows
    else:
        raise BnShapleyError(f"unknown covariance source {source!r}")

    logging.info(
        "Subgraph analysis of %s over %s inputs (%s covariance).", graph.nodes[out].name, n_factors, mode.value
    )
    return _decompose(graph.nodes[out], factors, gamma, sigma, mode, notes, meta)


# === Monte Carlo cross-check ===
def mc_cost_remaining_variance(graph, theta, output, subset, n_draws, seed=None):
    """
    Pick-freeze estimate of E[Var[Y | W_{-J}]] under independent inputs.

    Two factor samples share W_{-J} and redraw W_J; the cost is half the mean
    squared difference of the paired outputs.

    Returns:
        (estimate, standard error)
    """
    factors = input_factors(graph)
    positions = {_resolve_factor(factors, f) for f in subset}
    redraw = [factors[i].node.index for i in sorted(positions)]
    rng = get_rng(seed)
    first = propagate.sample_factors(graph, theta, n_draws, rng)
    second = first.copy()
    if redraw:
        second[:, redraw] = propagate.sample_factors(graph, theta, n_draws, rng)[:, redraw]
    k = graph.index(output)
    outputs_a = propagate.apply_factors(graph, theta, first)[:, k]
    outputs_b = propagate.apply_factors(graph, theta, second)[:, k]
    half_sq = 0.5 * (outputs_a - outputs_b) ** 2
    return float(half_sq.mean()), float(half_sq.std(ddof=1) / math.sqrt(n_draws))
