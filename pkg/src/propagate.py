"""
Exact moment propagation through the linear-Gaussian network.

Every node is an affine function of the independent input factors (the CPPs
and the CQA residuals). The path weights γ are computed by a dynamic program
over the topological order rather than by enumerating paths:

    γ_{k,n} = [k == n] + Σ_{p ∈ Pa(n)} β_{p,n} γ_{k,p}

Functions:
- gamma_matrix(graph, theta): full n x n matrix, G[k, n] = γ_{k,n}.
- gamma_weights(graph, theta, target): GammaMap over the graph's input factors.
- linear_representation(graph, theta, target): intercept plus GammaMap.
- node_moments(graph, theta): per-node mean and marginal variance.
- node_covariance(graph, theta, a, b) / covariance_matrix(graph, theta)
- sample_factors / forward_sample: seeded ancestral sampling.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd

from .bn_model import FactorKind, input_factors
from .dataset import BatchDataset
from .exceptions import InvalidArgument, TargetIsCpp
from .utils.rng import get_rng


def gamma_matrix_from_beta(graph, beta):
    """Path-weight matrix for a beta vector aligned with `graph.edges`."""
    n_nodes = len(graph)
    gamma = np.eye(n_nodes)
    weights = np.zeros((n_nodes, n_nodes))
    for (parent, child), weight in zip(graph.edges, beta):
        weights[parent, child] = weight
    for node in graph.topo:
        for parent in graph.parents(node):
            gamma[:, node] += weights[parent, node] * gamma[:, parent]
    return gamma


def gamma_matrix(graph, theta):
    """G[k, n] = γ_{k,n}, the net linear effect of node k's own factor on node n."""
    return gamma_matrix_from_beta(graph, theta.beta_vector(graph))


def _require_target(graph, target):
    k = graph.index(target)
    if graph.is_cpp(k):
        raise TargetIsCpp(graph.nodes[k].name)
    return k


@dataclass(frozen=True)
class GammaMap:
    """γ weights of every input factor on `target`."""

    target: object
    weights: dict

    def __getitem__(self, factor):
        return self.weights[factor]

    def by_label(self):
        return {factor.label: weight for factor, weight in self.weights.items()}

    def vector(self):
        return np.array(list(self.weights.values()))


def gamma_weights(graph, theta, target):
    """
    Path weights γ_{W,target} for every input factor W of the graph.

    Raises:
        TargetIsCpp: if `target` is a CPP node.
    """
    k = _require_target(graph, target)
    column = gamma_matrix(graph, theta)[:, k]
    weights = {factor: float(column[factor.node.index]) for factor in input_factors(graph)}
    return GammaMap(graph.nodes[k], weights)


class LinearRepresentation(NamedTuple):
    intercept: float
    gamma: GammaMap

    def evaluate(self, factor_draws):
        """
        Evaluate target = μ_target + Σ γ_W W on centred factor draws.

        Args:
            factor_draws: (R, n) array, column k holding X_k - μ_k for a CPP k
                and e_k for a CQA k (as returned by `sample_factors`).
        """
        factor_draws = np.atleast_2d(factor_draws)
        columns = [factor.node.index for factor in self.gamma.weights]
        return self.intercept + factor_draws[:, columns] @ self.gamma.vector()


def linear_representation(graph, theta, target):
    """Affine representation X_target = μ_target + Σ γ (X_k - μ_k) + Σ γ e_k."""
    k = _require_target(graph, target)
    return LinearRepresentation(float(theta.mu[k]), gamma_weights(graph, theta, k))


class NodeMoments(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray

    def to_frame(self, graph):
        return pd.DataFrame(
            {"mean": self.mean, "variance": self.variance, "sd": np.sqrt(self.variance)},
            index=pd.Index(graph.names, name="node"),
        )


def node_moments(graph, theta):
    """Means μ_n and marginal variances Σ_k γ²_{k,n} v²_k of every node."""
    gamma = gamma_matrix(graph, theta)
    variance = (gamma**2 * theta.v2[:, None]).sum(axis=0)
    return NodeMoments(np.array(theta.mu, dtype=float), variance)


def covariance_matrix(graph, theta):
    """Model-implied covariance of all nodes, Gᵀ diag(v²) G."""
    gamma = gamma_matrix(graph, theta)
    return gamma.T @ (theta.v2[:, None] * gamma)


def node_covariance(graph, theta, a, b):
    """Cov(X_a, X_b) = Σ over shared input factors of γ_{ℓ,a} γ_{ℓ,b} v²_ℓ."""
    gamma = gamma_matrix(graph, theta)
    i, j = graph.index(a), graph.index(b)
    return float(np.sum(gamma[:, i] * gamma[:, j] * theta.v2))


def sample_factors(graph, theta, n_rows, rng):
    """
    Draw centred input factors, shape (R, n), in declaration column order.

    Draw order is row-major over the topological order: the standard normal for
    row r and the node at topological rank t is the (r * n + t)-th draw.
    """
    normals = rng.standard_normal((n_rows, len(graph)))
    factors = np.empty_like(normals)
    factors[:, list(graph.topo)] = normals
    return factors * np.sqrt(theta.v2)[None, :]


def apply_factors(graph, theta, factors):
    """Push centred factor draws through the structural equations, in topological order."""
    values = np.empty_like(factors)
    deviations = np.empty_like(factors)
    for node in graph.topo:
        deviation = factors[:, node].copy()
        for parent in graph.parents(node):
            deviation += theta.beta[(parent, node)] * deviations[:, parent]
        deviations[:, node] = deviation
        values[:, node] = theta.mu[node] + deviation
    return values


def forward_sample(graph, theta, n_rows, seed=None, return_factors=False):
    """
    Sample `n_rows` complete batches: CPP ~ N(μ, v²), CQA by its structural equation.

    Args:
        graph (ProcessGraph): the network.
        theta (Theta): coefficients.
        n_rows (int): R >= 1.
        seed (int | None): fixed seed gives a bit-identical sample on one platform;
            the first k rows do not depend on `n_rows`.
        return_factors (bool): also return the centred factor draws.

    Returns:
        BatchDataset, or (BatchDataset, factors) when `return_factors` is set.
    """
    if n_rows < 1:
        raise InvalidArgument("n_rows", f"at least one row is needed, got {n_rows}")
    rng = get_rng(seed)
    factors = sample_factors(graph, theta, n_rows, rng)
    values = apply_factors(graph, theta, factors)
    logging.debug("Forward-sampled %s rows over %s nodes (seed=%s).", n_rows, len(graph), seed)
    dataset = BatchDataset.complete(graph.names, values)
    if return_factors:
        return dataset, factors
    return dataset


def factor_variances(graph, theta, factors=None):
    """v² of each input factor (a CPP's marginal variance or a residual's variance)."""
    factors = input_factors(graph) if factors is None else factors
    out = []
    for factor in factors:
        if factor.kind is FactorKind.BOUNDARY:
            raise ValueError("boundary factors have no single conditional variance")
        out.append(theta.v2[factor.node.index])
    return np.array(out)
