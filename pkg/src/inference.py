"""
Bayesian learning of θ = (μ, v², β) for a linear-Gaussian process network.

Conjugate vague priors give exact full conditionals:

- β_ij | rest  ~ Normal, from the rows observing child j
- v_i² | rest  ~ Inv-Gamma(κ/2, λ/2), from the rows observing node i
- μ_i  | rest  ~ Normal, from the rows observing i and the rows observing each child

Rows may observe the whole graph or only a parent-closed top sub-graph; each
row carries its own scope mask, so complete and mixed datasets share one code
path (with no incomplete rows the mixed forms reduce to the complete ones).

Functions:
- default_prior(graph, data=None, **overrides)
- cond_post_beta / cond_post_v2 / cond_post_mu
- gibbs_sample(graph, prior, data, n_iter, burnin, thin, seed)
- chain_diagnostics(draws, graph)
- mse_study(graph, theta_true, sizes, n_macro, n_draws, burnin, thin, seed)

Dependencies:
- numpy, scipy.stats, pandas
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
import pandas as pd
from scipy import stats

from .bn_model import Theta
from .dataset import BatchDataset
from .exceptions import (
    BnShapleyError,
    ChildUnobservedInAllRows,
    EmptyDataset,
    InvalidChainParams,
)
from .propagate import forward_sample
from .utils import config
from .utils.rng import derive_seed, get_rng

__all__ = [
    "BatchDataset",
    "Prior",
    "default_prior",
    "NormalPosterior",
    "InvGammaPosterior",
    "cond_post_beta",
    "cond_post_v2",
    "cond_post_mu",
    "PosteriorDraws",
    "gibbs_sample",
    "chain_diagnostics",
    "effective_sample_size",
    "mse_study",
]


# === Prior ===
@dataclass(frozen=True, eq=False)
class Prior:
    """
    Conjugate prior hyperparameters.

    Attributes:
        mu_mean, mu_var (np.ndarray): (μ⁰, σ⁰²) per node.
        kappa, lam (np.ndarray): (κ⁰, λ⁰) per node for v².
        beta_mean, beta_var (np.ndarray): (θ⁰, τ⁰²) per edge, aligned with graph.edges.
    """

    mu_mean: np.ndarray
    mu_var: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    beta_mean: np.ndarray
    beta_var: np.ndarray

    def __post_init__(self):
        for name in ("mu_mean", "mu_var", "kappa", "lam", "beta_mean", "beta_var"):
            array = np.array(getattr(self, name), dtype=float, ndmin=1)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        for name in ("mu_var", "kappa", "lam", "beta_var"):
            if np.any(getattr(self, name) <= 0.0):
                raise BnShapleyError(f"prior hyperparameter {name} must be positive")

    def to_dict(self, graph):
        return {
            "nodes": {
                name: {
                    "mu_mean": float(self.mu_mean[k]),
                    "mu_var": float(self.mu_var[k]),
                    "kappa": float(self.kappa[k]),
                    "lambda": float(self.lam[k]),
                }
                for k, name in enumerate(graph.names)
            },
            "edges": [
                {
                    "parent": graph.nodes[p].name,
                    "child": graph.nodes[c].name,
                    "beta_mean": float(self.beta_mean[e]),
                    "beta_var": float(self.beta_var[e]),
                }
                for e, (p, c) in enumerate(graph.edges)
            ],
        }

    @classmethod
    def from_dict(cls, graph, record):
        nodes = [record["nodes"][name] for name in graph.names]
        by_edge = {(row["parent"], row["child"]): row for row in record.get("edges", [])}
        edges = [by_edge[graph.edge_names(e)] for e in range(len(graph.edges))]
        return cls(
            mu_mean=[row["mu_mean"] for row in nodes],
            mu_var=[row["mu_var"] for row in nodes],
            kappa=[row["kappa"] for row in nodes],
            lam=[row["lambda"] for row in nodes],
            beta_mean=[row["beta_mean"] for row in edges],
            beta_var=[row["beta_var"] for row in edges],
        )


def default_prior(
    graph,
    data=None,
    mu_var=config.PRIOR_MEAN_VARIANCE,
    beta_mean=config.PRIOR_BETA_MEAN,
    beta_var=config.PRIOR_BETA_VARIANCE,
    kappa=config.PRIOR_KAPPA,
    lam=config.PRIOR_LAMBDA,
):
    """
    Vague conjugate prior. μ⁰ is the observed column mean when data is given, else 0.
    """
    n_nodes, n_edges = len(graph), len(graph.edges)
    mu_mean = np.zeros(n_nodes)
    if data is not None and data.n_rows > 0:
        means = data.column_means()
        mu_mean = np.where(np.isnan(means), 0.0, means)
    return Prior(
        mu_mean=mu_mean,
        mu_var=np.full(n_nodes, float(mu_var)),
        kappa=np.full(n_nodes, float(kappa)),
        lam=np.full(n_nodes, float(lam)),
        beta_mean=np.full(n_edges, float(beta_mean)),
        beta_var=np.full(n_edges, float(beta_var)),
    )


# === Conditional posteriors ===
@dataclass(frozen=True)
class NormalPosterior:
    mean: float
    variance: float

    @property
    def dist(self):
        return stats.norm(loc=self.mean, scale=math.sqrt(self.variance))

    def logpdf(self, x):
        return self.dist.logpdf(x)

    def sample(self, rng):
        return self.mean + math.sqrt(self.variance) * rng.standard_normal()


@dataclass(frozen=True)
class InvGammaPosterior:
    """Inv-Gamma(shape, scale) with shape = κ/2 and scale = λ/2."""

    shape: float
    scale: float

    @property
    def kappa(self):
        return 2.0 * self.shape

    @property
    def lam(self):
        return 2.0 * self.scale

    @property
    def dist(self):
        return stats.invgamma(a=self.shape, scale=self.scale)

    def logpdf(self, x):
        return self.dist.logpdf(x)

    def sample(self, rng):
        # reciprocal of an exact gamma variate
        gamma = rng.gamma(self.shape, 1.0 / self.scale)
        return 1.0 / max(gamma, np.finfo(float).tiny)


class _ChainData:
    """Observed values and per-node row sets shared by every conditional."""

    def __init__(self, graph, data):
        self.graph = graph
        self.n_rows = data.n_rows
        self.values = np.nan_to_num(np.asarray(data.values), nan=0.0)
        self.rows = [data.rows_observing(k) for k in range(len(graph))]
        self.in_edges = [[] for _ in range(len(graph))]
        self.out_edges = [[] for _ in range(len(graph))]
        for e, (parent, child) in enumerate(graph.edges):
            self.in_edges[child].append(e)
            self.out_edges[parent].append(e)

    def observed(self, k):
        return self.rows[k].size > 0

    def partial_residual(self, mu, beta, node, skip_edge=None):
        """x_node - μ_node - Σ β (x_parent - μ_parent) over rows observing `node`."""
        rows = self.rows[node]
        out = self.values[rows, node] - mu[node]
        for e in self.in_edges[node]:
            if e == skip_edge:
                continue
            parent = self.graph.edges[e][0]
            out = out - beta[e] * (self.values[rows, parent] - mu[parent])
        return out

    def beta_posterior(self, prior, mu, v2, beta, e):
        parent, child = self.graph.edges[e]
        rows = self.rows[child]
        alpha = self.values[rows, parent] - mu[parent]
        remainder = self.partial_residual(mu, beta, child, skip_edge=e)
        tau0, theta0, v2_child = prior.beta_var[e], prior.beta_mean[e], v2[child]
        denominator = tau0 * np.dot(alpha, alpha) + v2_child
        return NormalPosterior(
            (tau0 * np.dot(alpha, remainder) + v2_child * theta0) / denominator,
            tau0 * v2_child / denominator,
        )

    def v2_posterior(self, prior, mu, beta, node):
        residual = self.partial_residual(mu, beta, node)
        kappa = prior.kappa[node] + residual.size
        lam = prior.lam[node] + np.dot(residual, residual)
        return InvGammaPosterior(kappa / 2.0, lam / 2.0)

    def mu_posterior(self, prior, mu, v2, beta, node):
        own = self.partial_residual(mu, beta, node) + mu[node]
        precision = 1.0 / prior.mu_var[node] + own.size / v2[node]
        weighted = prior.mu_mean[node] / prior.mu_var[node] + own.sum() / v2[node]
        for e in self.out_edges[node]:
            child = self.graph.edges[e][1]
            rows = self.rows[child]
            if rows.size == 0:
                continue
            c = beta[e] * self.values[rows, node] - self.partial_residual(mu, beta, child, skip_edge=e)
            precision += rows.size * beta[e] ** 2 / v2[child]
            weighted += beta[e] * c.sum() / v2[child]
        variance = 1.0 / precision
        return NormalPosterior(variance * weighted, variance)


def _unpack(graph, theta):
    return np.array(theta.mu, dtype=float), np.array(theta.v2, dtype=float), theta.beta_vector(graph)


def cond_post_beta(graph, data, theta, edge, prior=None):
    """
    Full conditional of β_ij given every other coefficient.

    θ^(R) = (τ⁰² Σ α m + v_j² θ⁰) / (τ⁰² Σ α² + v_j²),  τ^(R)² = τ⁰² v_j² / (τ⁰² Σ α² + v_j²)

    with α = x_i - μ_i and m the partial residual of x_j without edge (i, j),
    summed over rows observing j.

    Raises:
        ChildUnobservedInAllRows: the dataset has rows but none observes j.
    """
    prior = prior or default_prior(graph)
    e = edge if isinstance(edge, (int, np.integer)) else graph.edge_index(edge)
    child = graph.edges[e][1]
    context = _ChainData(graph, data)
    if context.n_rows > 0 and not context.observed(child):
        raise ChildUnobservedInAllRows(graph.nodes[child].name)
    mu, v2, beta = _unpack(graph, theta)
    return context.beta_posterior(prior, mu, v2, beta, e)


def cond_post_v2(graph, data, theta, node, prior=None):
    """Full conditional Inv-Gamma(κ^(R)/2, λ^(R)/2) of v_i²."""
    prior = prior or default_prior(graph)
    mu, _, beta = _unpack(graph, theta)
    return _ChainData(graph, data).v2_posterior(prior, mu, beta, graph.index(node))


def cond_post_mu(graph, data, theta, node, prior=None):
    """
    Full conditional of μ_i, including the child-node terms.

    1/σ^(R)² = 1/σ⁰² + R_i/v_i² + Σ_children R_j β_ij²/v_j²
    """
    prior = prior or default_prior(graph)
    mu, v2, beta = _unpack(graph, theta)
    return _ChainData(graph, data).mu_posterior(prior, mu, v2, beta, graph.index(node))


# === Gibbs sampler ===
def coefficient_names(graph):
    """Column labels of a flattened θ: mu:<node>, v2:<node>, beta:<parent>-><child>."""
    return (
        [f"mu:{name}" for name in graph.names]
        + [f"v2:{name}" for name in graph.names]
        + [f"beta:{p}->{c}" for p, c in (graph.edge_names(e) for e in range(len(graph.edges)))]
    )


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """
    Thinned posterior draws of θ.

    Attributes:
        edges (tuple): (parent, child) index pairs the beta columns are aligned with.
        mu, v2 (np.ndarray): (B, n) draws.
        beta (np.ndarray): (B, E) draws.
        meta (dict): n_iter, burnin, thin, seed, init and data sizes.
    """

    edges: tuple
    mu: np.ndarray
    v2: np.ndarray
    beta: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(int(i) for i in edge) for edge in self.edges))
        for name in ("mu", "v2", "beta"):
            array = np.array(getattr(self, name), dtype=float, ndmin=2)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def __len__(self):
        return self.mu.shape[0]

    @property
    def n_draws(self):
        return len(self)

    def theta(self, b):
        return Theta(self.mu[b], self.v2[b], dict(zip(self.edges, self.beta[b])))

    def thetas(self):
        for b in range(len(self)):
            yield self.theta(b)

    def posterior_mean(self):
        """θ at the sample mean of every coefficient."""
        return Theta(self.mu.mean(axis=0), self.v2.mean(axis=0), dict(zip(self.edges, self.beta.mean(axis=0))))

    def select(self, index):
        index = np.atleast_1d(index)
        return PosteriorDraws(self.edges, self.mu[index], self.v2[index], self.beta[index], dict(self.meta))

    def matrix(self):
        """(B, 2n + E) array in `coefficient_names` column order."""
        return np.hstack([self.mu, self.v2, self.beta])

    def to_frame(self, graph):
        return pd.DataFrame(self.matrix(), columns=coefficient_names(graph))

    @classmethod
    def from_matrix(cls, graph, matrix, meta=None):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        n_nodes = len(graph)
        return cls(
            graph.edges,
            matrix[:, :n_nodes],
            matrix[:, n_nodes : 2 * n_nodes],
            matrix[:, 2 * n_nodes :],
            dict(meta or {}),
        )

    def __eq__(self, other):
        if not isinstance(other, PosteriorDraws):
            return NotImplemented
        return (
            self.edges == other.edges
            and np.array_equal(self.matrix(), other.matrix())
            and self.meta == other.meta
        )


def _check_chain(n_iter, burnin, thin):
    if thin < 1 or burnin < 0 or n_iter <= burnin:
        raise InvalidChainParams(f"need n_iter > burnin >= 0 and thin >= 1, got {n_iter}, {burnin}, {thin}")
    if (n_iter - burnin) % thin:
        raise InvalidChainParams(f"n_iter - burnin = {n_iter - burnin} is not divisible by thin = {thin}")


def _initial_state(context, prior, init, rng):
    graph = context.graph
    n_nodes = len(graph)
    if init == "prior":
        mu = prior.mu_mean + np.sqrt(prior.mu_var) * rng.standard_normal(n_nodes)
        v2 = np.array([InvGammaPosterior(prior.kappa[k] / 2, prior.lam[k] / 2).sample(rng) for k in range(n_nodes)])
        beta = prior.beta_mean + np.sqrt(prior.beta_var) * rng.standard_normal(len(graph.edges))
        return mu, v2, beta
    if init != "moments":
        raise InvalidChainParams(f"unknown init {init!r}")
    mu = np.array(prior.mu_mean, dtype=float)
    v2 = np.ones(n_nodes)
    beta = np.array(prior.beta_mean, dtype=float)
    for k in range(n_nodes):
        column = context.values[context.rows[k], k]
        if column.size >= 2 and column.var(ddof=1) > 0.0:
            v2[k] = column.var(ddof=1)
        edges = context.in_edges[k]
        if edges and column.size > len(edges) + 1:
            _least_squares_start(context, k, edges, beta, v2)
    return mu, v2, beta


def _least_squares_start(context, node, edges, beta, v2):
    """Overwrite β into `node` and its v² with the least-squares fit over the rows observing it."""
    rows = context.rows[node]
    parents = [context.graph.edges[e][0] for e in edges]
    design = context.values[np.ix_(rows, parents)]
    design = design - design.mean(axis=0)
    response = context.values[rows, node] - context.values[rows, node].mean()
    coef, _, rank, _ = np.linalg.lstsq(design, response, rcond=None)
    if rank < len(edges):
        return
    residual = response - design @ coef
    dof = rows.size - len(edges) - 1
    beta[edges] = coef
    if np.dot(residual, residual) > 0.0:
        v2[node] = np.dot(residual, residual) / dof


def _sweep(context, prior, mu, v2, beta, rng, free=None):
    """One scan over β, then v², then μ, updating the arrays in place."""
    graph = context.graph
    free_beta, free_v2, free_mu = free if free is not None else (range(len(beta)), range(len(v2)), range(len(mu)))
    for e in free_beta:
        if context.observed(graph.edges[e][1]):
            beta[e] = context.beta_posterior(prior, mu, v2, beta, e).sample(rng)
        else:
            beta[e] = prior.beta_mean[e] + math.sqrt(prior.beta_var[e]) * rng.standard_normal()
    for k in free_v2:
        v2[k] = context.v2_posterior(prior, mu, beta, k).sample(rng)
    for k in free_mu:
        mu[k] = context.mu_posterior(prior, mu, v2, beta, k).sample(rng)


def gibbs_sample(
    graph,
    prior,
    data,
    n_iter=None,
    burnin=config.GIBBS_BURNIN,
    thin=config.GIBBS_THIN,
    seed=None,
    init="moments",
):
    """
    Run the Gibbs sampler and keep every `thin`-th sweep after `burnin`.

    Args:
        graph (ProcessGraph): the network.
        prior (Prior): hyperparameters; None uses default_prior(graph, data).
        data (BatchDataset): complete and/or top-sub-graph rows.
        n_iter (int): total sweeps T; default burnin + GIBBS_DRAWS * thin.
        burnin (int): T₀.
        thin (int): h; (T - T₀) must be divisible by h.
        seed (int | None): fixed seed replays the chain exactly.
        init (str): "moments" (column means and per-node least squares) or "prior".

    Returns:
        PosteriorDraws with B = (T - T₀) / h draws.

    Raises:
        EmptyDataset, InvalidChainParams, ScopeNotParentClosed
    """
    if n_iter is None:
        n_iter = burnin + config.GIBBS_DRAWS * thin
    _check_chain(n_iter, burnin, thin)
    if data.n_rows == 0:
        raise EmptyDataset("gibbs_sample needs at least one row")
    data.validate_scopes(graph)
    prior = prior or default_prior(graph, data)

    rng = get_rng(seed)
    context = _ChainData(graph, data)
    mu, v2, beta = _initial_state(context, prior, init, rng)
    n_keep = (n_iter - burnin) // thin
    kept_mu = np.empty((n_keep, len(graph)))
    kept_v2 = np.empty((n_keep, len(graph)))
    kept_beta = np.empty((n_keep, len(graph.edges)))

    logging.info(
        "Gibbs sampling: T=%s, T0=%s, h=%s, seed=%s, rows=%s (complete %s).",
        n_iter, burnin, thin, seed, data.n_rows, data.n_complete,
    )
    stored = 0
    for t in range(1, n_iter + 1):
        _sweep(context, prior, mu, v2, beta, rng)
        if t > burnin and (t - burnin) % thin == 0:
            kept_mu[stored], kept_v2[stored], kept_beta[stored] = mu, v2, beta
            stored += 1
        if t % 1000 == 0:
            logging.debug("Gibbs sweep %s/%s", t, n_iter)

    meta = {
        "n_iter": n_iter,
        "burnin": burnin,
        "thin": thin,
        "seed": seed,
        "init": init,
        "n_rows": data.n_rows,
        "n_complete": data.n_complete,
    }
    return PosteriorDraws(graph.edges, kept_mu, kept_v2, kept_beta, meta)


# === Diagnostics ===
def _autocorrelation(x):
    n = x.size
    centred = x - x.mean()
    size = 1 << int(math.ceil(math.log2(2 * n)))
    spectrum = np.fft.rfft(centred, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(x):
    """Initial-positive-sequence ESS of a single chain."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0.0:
        return float(n)
    rho = _autocorrelation(x)
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        total += pair
    tau = max(2.0 * total - 1.0, 1.0 / n)
    return float(n / tau)


def chain_diagnostics(draws, graph):
    """
    Advisory per-coefficient summary of a chain.

    Returns:
        DataFrame indexed by coefficient with mean, sd, q025, q975, lag1 and ess.
    """
    matrix = draws.matrix()
    rows = []
    for j, name in enumerate(coefficient_names(graph)):
        column = matrix[:, j]
        lag1 = _autocorrelation(column)[1] if column.size > 2 and np.var(column) > 0 else np.nan
        rows.append(
            {
                "coefficient": name,
                "mean": column.mean(),
                "sd": column.std(ddof=1) if column.size > 1 else np.nan,
                "q025": np.quantile(column, 0.025),
                "q975": np.quantile(column, 0.975),
                "lag1": lag1,
                "ess": effective_sample_size(column),
            }
        )
    return pd.DataFrame(rows).set_index("coefficient")


# === Convergence study ===
def _replication_mse(graph, theta_true, n_rows, rep, n_draws, burnin, thin, seed):
    data = forward_sample(graph, theta_true, n_rows, seed=derive_seed(seed, n_rows, rep, 0))
    draws = gibbs_sample(
        graph,
        default_prior(graph, data),
        data,
        n_iter=burnin + n_draws * thin,
        burnin=burnin,
        thin=thin,
        seed=derive_seed(seed, n_rows, rep, 1),
    )
    truth = {"mu": theta_true.mu, "v2": theta_true.v2, "beta": theta_true.beta_vector(graph)}
    sampled = {"mu": draws.mu, "v2": draws.v2, "beta": draws.beta}
    return {group: float(((sampled[group] - truth[group][None, :]) ** 2).mean()) for group in truth}


def mse_study(
    graph,
    theta_true,
    sizes=(30, 100, 500),
    n_macro=20,
    n_draws=config.GIBBS_DRAWS,
    burnin=config.GIBBS_BURNIN,
    thin=config.GIBBS_THIN,
    seed=0,
    workers=None,
):
    """
    Grouped posterior MSE of μ, v² and β against the true θ, per batch size.

    Each (size, replication) pair simulates complete data from `theta_true`
    and runs its own chain on seeds derived from (seed, size, replication),
    so results do not depend on the number of worker processes.

    Returns:
        DataFrame with columns n_rows, group, mse, se.
    """
    workers = workers or config.threads()
    tasks = [(n_rows, rep) for n_rows in sizes for rep in range(n_macro)]
    replicate = partial(_replication_mse, graph, theta_true, n_draws=n_draws, burnin=burnin, thin=thin, seed=seed)
    logging.info("MSE study over sizes %s with %s replications each (%s workers).", list(sizes), n_macro, workers)
    if workers == 1:
        results = [replicate(n_rows, rep) for n_rows, rep in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(replicate, *zip(*tasks)))

    rows = []
    for n_rows in sizes:
        replicated = [result for (size, _), result in zip(tasks, results) if size == n_rows]
        for group in ("mu", "v2", "beta"):
            values = np.array([result[group] for result in replicated])
            se = values.std(ddof=1) / math.sqrt(values.size) if values.size > 1 else np.nan
            rows.append({"n_rows": n_rows, "group": group, "mse": values.mean(), "se": se})
    return pd.DataFrame(rows)
