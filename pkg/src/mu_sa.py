"""
Model-uncertainty attribution for Shapley-based criticality.

Posterior draws of θ turn every Shapley value Sh_{W,Y} and criticality p_{W,Y}
into a random quantity. This module summarises that posterior spread and then
attributes it to the individual coefficients on the paths from W to Y, using a
second Shapley game whose cost is the expected conditional posterior variance
left when a coalition J of coefficients is free and the rest are fixed:

    c(J) = E[ Var[ q(θ) | θ_{-J}, X ] ]

Each c(J) is estimated by nested Gibbs sampling (outer posterior draws freeze
θ_{-J}, short inner chains resample θ_J) and the game is solved by random
permutation walks with c(∅) = 0 and c(all) pinned to the overall posterior
variance, so per-coefficient contributions always add up to it.

Functions:
- posterior_sv_summary(draws, graph, output)
- theta_path_set(graph, factor, output)
- nested_gibbs_cost(graph, prior, data, subset, outer_draws, n_inner, factor, output, quantity, seed)
- appro_shapley_mu(graph, prior, data, factor, output, quantity, ...)
- telescope_exactly(contributions, total)
- mu_proportions(report)
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import partial

import numpy as np
import pandas as pd

from .bn_model import FactorKind, InputFactor, input_factors
from .exceptions import (
    InvalidArgument,
    NoPathToOutput,
    TargetIsCpp,
    TooFewDraws,
    UnknownFactor,
    ZeroTotalVariance,
)
from .inference import _ChainData, _sweep, default_prior, gibbs_sample
from .propagate import gamma_matrix_from_beta
from .shapley import sv_closed_form
from .utils import config
from .utils.rng import derive_seed, get_rng


class Quantity(str, Enum):
    SHAPLEY = "shapley"
    CRITICALITY = "criticality"


class CoefficientKind(str, Enum):
    MU = "mu"
    V2 = "v2"
    BETA = "beta"


@dataclass(frozen=True, order=True)
class CoefficientId:
    """
    One coefficient of θ.

    `index` is a node index for MU/V2 and an edge index for BETA; `name` is the
    node name or "parent->child".
    """

    kind: CoefficientKind
    index: int
    name: str

    @classmethod
    def mu(cls, graph, node):
        k = graph.index(node)
        return cls(CoefficientKind.MU, k, graph.nodes[k].name)

    @classmethod
    def v2(cls, graph, node):
        k = graph.index(node)
        return cls(CoefficientKind.V2, k, graph.nodes[k].name)

    @classmethod
    def beta(cls, graph, edge):
        e = edge if isinstance(edge, (int, np.integer)) else graph.edge_index(edge)
        return cls(CoefficientKind.BETA, int(e), "->".join(graph.edge_names(e)))

    @classmethod
    def parse(cls, graph, label):
        """Inverse of `label`: "mu[X1]", "v2[X4]" or "beta[X11->X15]"."""
        kind, _, rest = label.partition("[")
        name = rest.rstrip("]")
        kind = CoefficientKind(kind)
        if kind is CoefficientKind.BETA:
            parent, _, child = name.partition("->")
            return cls.beta(graph, (parent, child))
        return cls(kind, graph.index(name), name)

    @property
    def label(self):
        return f"{self.kind.value}[{self.name}]"

    def __str__(self):
        return self.label


def _resolve_input(graph, factor):
    if isinstance(factor, InputFactor):
        return factor
    for candidate in input_factors(graph):
        if candidate.label == factor:
            return candidate
    raise UnknownFactor(factor)


def _resolve_output(graph, output):
    k = graph.index(output)
    if graph.is_cpp(k):
        raise TargetIsCpp(graph.nodes[k].name)
    return k


# === Posterior summary ===
@dataclass(frozen=True, eq=False)
class PosteriorSvSummary:
    """
    Posterior mean and variance of every factor's Shapley value and criticality.

    Attributes:
        output (NodeId), factors (tuple[InputFactor])
        sh_mean, sh_var, p_mean, p_var (np.ndarray): per factor.
        n_draws (int): B.
        meta (dict): chain metadata carried over from the draws.
    """

    output: object
    factors: tuple
    sh_mean: np.ndarray
    sh_var: np.ndarray
    p_mean: np.ndarray
    p_var: np.ndarray
    n_draws: int
    meta: dict = field(default_factory=dict)

    def _position(self, factor):
        for position, candidate in enumerate(self.factors):
            if candidate == factor or candidate.label == factor:
                return position
        raise UnknownFactor(factor)

    def criticality_of(self, factor):
        return float(self.p_mean[self._position(factor)])

    def ranking(self):
        order = sorted(range(len(self.factors)), key=lambda i: -self.p_mean[i])
        return [self.factors[i] for i in order]

    def to_frame(self):
        return pd.DataFrame(
            {
                "factor": [f.label for f in self.factors],
                "sh_mean": self.sh_mean,
                "sh_sd": np.sqrt(self.sh_var),
                "p_mean": self.p_mean,
                "p_sd": np.sqrt(self.p_var),
            }
        )

    def to_dict(self):
        return {
            "kind": "posterior_sv_summary",
            "output": self.output.name,
            "n_draws": self.n_draws,
            "meta": dict(self.meta),
            "factors": [
                {
                    "factor": f.label,
                    "kind": f.kind.value,
                    "node": f.node.name,
                    "sh_mean": float(a),
                    "sh_var": float(b),
                    "p_mean": float(c),
                    "p_var": float(d),
                }
                for f, a, b, c, d in zip(self.factors, self.sh_mean, self.sh_var, self.p_mean, self.p_var)
            ],
        }

    @classmethod
    def from_dict(cls, graph, record):
        rows = record["factors"]
        column = lambda key: np.array([row[key] for row in rows], dtype=float)
        return cls(
            output=graph.node(record["output"]),
            factors=tuple(InputFactor(FactorKind(row["kind"]), graph.node(row["node"])) for row in rows),
            sh_mean=column("sh_mean"),
            sh_var=column("sh_var"),
            p_mean=column("p_mean"),
            p_var=column("p_var"),
            n_draws=int(record["n_draws"]),
            meta=dict(record.get("meta", {})),
        )


def posterior_sv_summary(draws, graph, output):
    """
    Sample mean and unbiased variance (divisor B-1) of Sh and p across posterior draws.

    Raises:
        TooFewDraws: fewer than 2 draws.
    """
    if len(draws) < 2:
        raise TooFewDraws(len(draws))
    k = _resolve_output(graph, output)
    shapley, criticality = [], []
    for theta in draws.thetas():
        report = sv_closed_form(graph, theta, k)
        shapley.append(report.shapley)
        criticality.append(report.criticality)
    shapley, criticality = np.array(shapley), np.array(criticality)
    return PosteriorSvSummary(
        output=graph.nodes[k],
        factors=tuple(input_factors(graph)),
        sh_mean=shapley.mean(axis=0),
        sh_var=shapley.var(axis=0, ddof=1),
        p_mean=criticality.mean(axis=0),
        p_var=criticality.var(axis=0, ddof=1),
        n_draws=len(draws),
        meta=dict(draws.meta),
    )


# === Coefficient path set ===
def theta_path_set(graph, factor, output, strict=False):
    """
    Coefficients that carry the uncertainty of `factor` to `output`.

    Returns v² of the factor's node followed by every β on a directed path from
    that node to `output`, in edge declaration order. μ never affects Sh.

    Raises:
        NoPathToOutput: only when `strict` and no directed path exists.
    """
    factor = _resolve_input(graph, factor)
    target = _resolve_output(graph, output)
    source = factor.node.index
    downstream = graph.descendants(source) | {source}
    upstream = graph.ancestors(target) | {target}
    edges = [e for e, (a, b) in enumerate(graph.edges) if a in downstream and b in upstream]
    if not edges and source != target:
        if strict:
            raise NoPathToOutput(f"no directed path from {factor.label} to {graph.nodes[target].name}")
        logging.warning("No directed path from %s to %s; only v2 is attributed.", factor.label, graph.nodes[target].name)
    return (CoefficientId.v2(graph, source),) + tuple(CoefficientId.beta(graph, e) for e in edges)


# === Nested Gibbs cost ===
def _quantity_value(graph, v2, beta, source, target, quantity):
    column = gamma_matrix_from_beta(graph, beta)[:, target]
    shapley = column[source] ** 2 * v2[source]
    if quantity is Quantity.SHAPLEY:
        return shapley
    return shapley / np.dot(column**2, v2)


def _free_sets(subset):
    free_beta = sorted(c.index for c in subset if c.kind is CoefficientKind.BETA)
    free_v2 = sorted(c.index for c in subset if c.kind is CoefficientKind.V2)
    free_mu = sorted(c.index for c in subset if c.kind is CoefficientKind.MU)
    return free_beta, free_v2, free_mu


def nested_gibbs_cost(
    graph,
    prior,
    data,
    subset,
    outer_draws,
    n_inner,
    factor,
    output,
    quantity=Quantity.CRITICALITY,
    inner_thin=config.NESTED_THIN,
    seed=None,
    context=None,
):
    """
    Estimate c(J) = E[Var[q | θ_{-J}, X]] for the coefficient coalition J.

    For every outer draw the coefficients outside J stay at the draw; an inner
    chain of n_inner * inner_thin + 1 sweeps, started at the draw, resamples J in
    Gibbs order and keeps sweeps 1 + inner_thin, 1 + 2 inner_thin, ...
    The inner sample variances (divisor n_inner - 1) are averaged.

    Returns:
        float; 0.0 for the empty coalition, without sampling.
    """
    subset = tuple(subset)
    if not subset:
        return 0.0
    if n_inner < 2:
        raise TooFewDraws(n_inner)
    quantity = Quantity(quantity)
    factor = _resolve_input(graph, factor)
    target = _resolve_output(graph, output)
    source = factor.node.index
    context = context or _ChainData(graph, data)
    free = _free_sets(subset)
    n_sweeps = n_inner * inner_thin + 1

    variances = []
    for b in range(len(outer_draws)):
        rng = get_rng(seed, b)
        mu = np.array(outer_draws.mu[b])
        v2 = np.array(outer_draws.v2[b])
        beta = np.array(outer_draws.beta[b])
        values = []
        for sweep in range(1, n_sweeps + 1):
            _sweep(context, prior, mu, v2, beta, rng, free=free)
            if sweep > 1 and (sweep - 1) % inner_thin == 0:
                values.append(_quantity_value(graph, v2, beta, source, target, quantity))
        variances.append(np.var(values, ddof=1))
    return float(np.mean(variances))


# === Permutation attribution ===
@dataclass(frozen=True, eq=False)
class MuReport:
    """
    Attribution of the posterior variance of one Sh or p to model coefficients.

    Attributes:
        factor (InputFactor), output (NodeId), quantity (Quantity)
        total (float): Var̂*, the pinned full-coalition cost.
        coefficients (tuple[CoefficientId]): the path set.
        contributions (np.ndarray): Ŝh* per coefficient.
        contribution_se (np.ndarray): standard error across permutations.
        meta (dict): n_perm, n_outer, n_inner, inner_iter, inner_thin, seed, draws meta.
    """

    factor: object
    output: object
    quantity: Quantity
    total: float
    coefficients: tuple
    contributions: np.ndarray
    contribution_se: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_frame(self):
        frame = pd.DataFrame(
            {
                "coefficient": [c.label for c in self.coefficients],
                "contribution": self.contributions,
                "se": self.contribution_se,
            }
        )
        if self.total != 0.0:
            frame["proportion"] = self.contributions / self.total
        return frame

    def to_dict(self):
        return {
            "kind": "mu_report",
            "factor": self.factor.label,
            "factor_kind": self.factor.kind.value,
            "factor_node": self.factor.node.name,
            "output": self.output.name,
            "quantity": self.quantity.value,
            "total": float(self.total),
            "meta": dict(self.meta),
            "coefficients": [
                {"coefficient": c.label, "contribution": float(s), "se": float(se)}
                for c, s, se in zip(self.coefficients, self.contributions, self.contribution_se)
            ],
        }

    @classmethod
    def from_dict(cls, graph, record):
        rows = record["coefficients"]
        return cls(
            factor=InputFactor(FactorKind(record["factor_kind"]), graph.node(record["factor_node"])),
            output=graph.node(record["output"]),
            quantity=Quantity(record["quantity"]),
            total=float(record["total"]),
            coefficients=tuple(CoefficientId.parse(graph, row["coefficient"]) for row in rows),
            contributions=np.array([row["contribution"] for row in rows], dtype=float),
            contribution_se=np.array([row["se"] for row in rows], dtype=float),
            meta=dict(record.get("meta", {})),
        )


def _posterior_quantity_variance(graph, draws, source, target, quantity):
    values = [
        _quantity_value(graph, draws.v2[b], draws.beta[b], source, target, quantity) for b in range(len(draws))
    ]
    return float(np.var(values, ddof=1))


def _outer_draws(draws, n_outer):
    index = np.unique(np.linspace(0, len(draws) - 1, n_outer).round().astype(int))
    return draws.select(index)


def _permutation_walk(
    perm, graph, prior, data, coefficients, outer, n_inner, factor, target, quantity, inner_thin, total, seed, context
):
    """Marginal cost increments along one random ordering of the coefficients."""
    n_coefficients = len(coefficients)
    order = get_rng(seed, 1, perm).permutation(n_coefficients)
    increments = np.zeros(n_coefficients)
    previous = 0.0
    for prefix in range(1, n_coefficients + 1):
        if prefix == n_coefficients:
            cost = total
        else:
            cost = nested_gibbs_cost(
                graph,
                prior,
                data,
                [coefficients[i] for i in order[:prefix]],
                outer,
                n_inner,
                factor,
                target,
                quantity,
                inner_thin=inner_thin,
                seed=derive_seed(seed, 2, perm, prefix),
                context=context,
            )
        increments[order[prefix - 1]] = cost - previous
        previous = cost
    return increments


def telescope_exactly(contributions, total):
    """
    Move the rounding gap between Σ contributions and `total` into the contributions.

    The exact gap is folded into one coefficient at a time, smallest magnitude
    first, until math.fsum of the vector rounds to `total`.

    Returns:
        (contributions, total): `total` is returned unchanged unless no single
        coefficient can absorb the gap, in which case it becomes the fsum.
    """
    contributions = np.array(contributions, dtype=float)
    if math.fsum(contributions) == total:
        return contributions, total
    gap = Fraction(total) - sum((Fraction(float(c)) for c in contributions), Fraction(0))
    for j in np.argsort(np.abs(contributions), kind="stable"):
        adjusted = contributions.copy()
        adjusted[j] = float(Fraction(float(adjusted[j])) + gap)
        if math.fsum(adjusted) == total:
            return adjusted, total
    logging.debug("Telescoping gap could not be absorbed; total set to %r.", math.fsum(contributions))
    return contributions, math.fsum(contributions)


def appro_shapley_mu(
    graph,
    prior,
    data,
    factor,
    output,
    quantity=Quantity.CRITICALITY,
    n_perm=config.NESTED_PERMUTATIONS,
    n_outer=config.NESTED_OUTER,
    n_inner=config.NESTED_INNER,
    inner_thin=config.NESTED_THIN,
    seed=None,
    draws=None,
    workers=None,
):
    """
    Attribute Var̂*[q | X] to the coefficients in theta_path_set(factor, output).

    Args:
        graph, prior, data: the model and its learning data; prior None uses default_prior.
        factor: input factor (InputFactor or label such as "X4").
        output: CQA/RESPONSE node.
        quantity: "shapley" or "criticality".
        n_perm (int): N_π random permutations.
        n_outer (int): B_O outer draws, evenly spaced over the posterior draws.
        n_inner (int): B_I kept inner draws per outer draw.
        inner_thin (int): inner thinning h.
        seed (int | None): root seed; permutations and prefixes use derived sub-streams.
        draws (PosteriorDraws | None): posterior draws; sampled with defaults when omitted.
        workers (int | None): worker processes for the permutation walks (default BN_SHAPLEY_THREADS).

    Returns:
        MuReport with math.fsum(contributions) == total.

    Raises:
        TooFewDraws, InvalidArgument, NoPathToOutput, TargetIsCpp, UnknownFactor
    """
    quantity = Quantity(quantity)
    factor = _resolve_input(graph, factor)
    target = _resolve_output(graph, output)
    prior = prior or default_prior(graph, data)
    if draws is None:
        draws = gibbs_sample(graph, prior, data, seed=derive_seed(seed, 0))
    if len(draws) < 2:
        raise TooFewDraws(len(draws))
    if n_perm < 1:
        raise InvalidArgument("n_perm", f"at least one permutation is needed, got {n_perm}")

    coefficients = theta_path_set(graph, factor, target)
    n_coefficients = len(coefficients)
    total = _posterior_quantity_variance(graph, draws, factor.node.index, target, quantity)
    outer = _outer_draws(draws, n_outer)
    context = _ChainData(graph, data)
    workers = workers or config.threads()
    walk = partial(
        _permutation_walk,
        graph=graph,
        prior=prior,
        data=data,
        coefficients=coefficients,
        outer=outer,
        n_inner=n_inner,
        factor=factor,
        target=target,
        quantity=quantity,
        inner_thin=inner_thin,
        total=total,
        seed=seed,
        context=context,
    )

    logging.info(
        "MU attribution of %s(%s, %s): %s coefficients, N_pi=%s, B_O=%s, B_I=%s, seed=%s.",
        quantity.value, factor.label, graph.nodes[target].name, n_coefficients, n_perm, len(outer), n_inner, seed,
    )
    if n_coefficients == 1:
        increments = np.full((1, 1), total)
    elif workers == 1:
        increments = np.array([walk(perm) for perm in range(n_perm)])
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            increments = np.array(list(executor.map(walk, range(n_perm))))

    contributions = np.array([math.fsum(increments[:, j]) / increments.shape[0] for j in range(n_coefficients)])
    if increments.shape[0] > 1:
        se = increments.std(axis=0, ddof=1) / math.sqrt(increments.shape[0])
    else:
        se = np.zeros(n_coefficients)
    contributions, total = telescope_exactly(contributions, total)

    meta = {
        "n_perm": n_perm if n_coefficients > 1 else 0,
        "n_outer": len(outer),
        "n_inner": n_inner,
        "inner_iter": n_inner * inner_thin + 1,
        "inner_thin": inner_thin,
        "seed": seed,
        "draws": dict(draws.meta),
    }
    return MuReport(
        factor=factor,
        output=graph.nodes[target],
        quantity=quantity,
        total=total,
        coefficients=coefficients,
        contributions=contributions,
        contribution_se=se,
        meta=meta,
    )


def mu_proportions(report):
    """
    Per-coefficient share Ŝh*_θ / Var̂* of the posterior variance.

    Negative shares (Monte Carlo noise) are kept and flagged.

    Raises:
        ZeroTotalVariance: the report's total is zero.
    """
    if report.total == 0.0:
        raise ZeroTotalVariance("posterior variance of the target quantity is zero")
    proportions = report.contributions / report.total
    negative = proportions < 0.0
    if negative.any():
        logging.warning(
            "Negative contributions for %s.", ", ".join(c.label for c, n in zip(report.coefficients, negative) if n)
        )
    return pd.DataFrame(
        {"proportion": proportions, "negative": negative},
        index=pd.Index([c.label for c in report.coefficients], name="coefficient"),
    )
