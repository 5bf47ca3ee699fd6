import math

import numpy as np
import pytest

from src.bn_model import Theta, build_graph, input_factors
from src.dataset import BatchDataset
from src.exceptions import (
    BnShapleyError,
    NotPositiveSemidefinite,
    OutputNotInSubgraph,
    TargetIsCpp,
    TooManyFactors,
    UnknownFactor,
)
from src.propagate import forward_sample, node_moments
from src.shapley import (
    CovarianceMode,
    InputCovariance,
    SvReport,
    cost_remaining_variance,
    criticality,
    mc_cost_remaining_variance,
    subgraph_analysis,
    sv_bruteforce,
    sv_closed_form,
)


def _fig4_theta(graph, rng=None):
    if rng is None:
        return Theta.from_arrays(graph, [7.0, 25.0, 5.0, 3.0, 2.0], [0.01, 6.25, 1.0, 0.5, 0.25], [0.5, 0.2, 0.9, 0.3])
    return Theta.from_arrays(graph, rng.normal(size=5), rng.uniform(0.1, 3.0, 5), rng.uniform(-2.0, 2.0, 4))


def test_cost_endpoints(unit_chain):
    graph, theta = unit_chain
    factors = input_factors(graph)
    assert cost_remaining_variance(graph, theta, "X3", []) == 0.0
    assert cost_remaining_variance(graph, theta, "X3", factors) == pytest.approx(3.0)
    assert cost_remaining_variance(graph, theta, "X3", ["X1"]) == pytest.approx(1.0)


def test_cost_single_cpp(fig4_graph):
    theta = _fig4_theta(fig4_graph)
    expected = (0.5 * 0.9) ** 2 * 0.01
    assert cost_remaining_variance(fig4_graph, theta, "X7", ["X1"]) == pytest.approx(expected, rel=1e-12)


def test_cost_rejects_unknown_factor(unit_chain):
    graph, theta = unit_chain
    with pytest.raises(UnknownFactor):
        cost_remaining_variance(graph, theta, "X3", ["X9"])


def test_unit_chain_shapley(unit_chain):
    graph, theta = unit_chain
    report = sv_closed_form(graph, theta, "X3")
    np.testing.assert_allclose(report.shapley, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(report.criticality, [1 / 3, 1 / 3, 1 / 3])
    assert criticality(report, "e_X2") == pytest.approx(1 / 3)
    with pytest.raises(UnknownFactor):
        criticality(report, "X7")


@pytest.mark.parametrize("seed", range(20))
def test_fig4_closed_form_terms(seed, fig4_graph):
    theta = _fig4_theta(fig4_graph, np.random.default_rng(seed))
    beta = {name: theta.beta_of(fig4_graph, *name) for name in [("X1", "X6"), ("X2", "X6"), ("X6", "X7"), ("X3", "X7")]}
    v2 = dict(zip(fig4_graph.names, theta.v2))
    b67 = beta[("X6", "X7")]
    expected = {
        "X1": (beta[("X1", "X6")] * b67) ** 2 * v2["X1"],
        "X2": (beta[("X2", "X6")] * b67) ** 2 * v2["X2"],
        "X3": beta[("X3", "X7")] ** 2 * v2["X3"],
        "e_X6": b67**2 * v2["X6"],
        "e_X7": v2["X7"],
    }
    report = sv_closed_form(fig4_graph, theta, "X7")
    for label, value in expected.items():
        assert report.shapley_of(label) == pytest.approx(value, rel=1e-12)
    assert report.total_variance == pytest.approx(node_moments(fig4_graph, theta).variance[4], rel=1e-12)


@pytest.mark.parametrize("seed", range(25))
def test_closed_form_matches_enumeration(seed, random_dag, random_theta):
    rng = np.random.default_rng(100 + seed)
    graph = random_dag(rng, int(rng.integers(1, 4)), int(rng.integers(2, 5)))
    theta = random_theta(graph, rng)
    output = graph.nodes[graph.topo[-1]].name
    factors = input_factors(graph)

    def cost(members, cov=None):
        return cost_remaining_variance(graph, theta, output, [factors[i] for i in members], cov)

    report = sv_closed_form(graph, theta, output)
    np.testing.assert_allclose(sv_bruteforce(cost, len(factors)), report.shapley, rtol=1e-9, atol=1e-12)

    loadings = rng.normal(size=(len(factors), len(factors)))
    user = InputCovariance.user(loadings @ loadings.T + 0.1 * np.eye(len(factors)))
    correlated = sv_closed_form(graph, theta, output, user)
    enumerated = sv_bruteforce(lambda members: cost(members, user), len(factors))
    np.testing.assert_allclose(enumerated, correlated.shapley, rtol=1e-9, atol=1e-10)
    assert correlated.covariance_mode == CovarianceMode.USER_SUPPLIED.value
    assert math.fsum(correlated.shapley) == pytest.approx(correlated.total_variance, rel=1e-12)


def test_bruteforce_small_games():
    assert sv_bruteforce(lambda members: 5.0 if members else 0.0, 1)[0] == 5.0
    symmetric = sv_bruteforce(lambda members: float(len(members) == 2), 2)
    np.testing.assert_allclose(symmetric, [0.5, 0.5])
    additive = [1.0, 2.0, 4.0]

    def game(members):
        return sum(additive[i] for i in members) + (3.0 if {0, 1} <= members else 0.0)

    np.testing.assert_allclose(sv_bruteforce(game, 3), [2.5, 3.5, 4.0])
    np.testing.assert_allclose(sv_bruteforce(game, 3, dual=True), [2.5, 3.5, 4.0])


def test_bruteforce_factor_limit():
    with pytest.raises(TooManyFactors):
        sv_bruteforce(lambda members: 0.0, 21)


def test_efficiency_on_mabs(mabs):
    graph, theta = mabs
    report = sv_closed_form(graph, theta, "X20")
    variance = node_moments(graph, theta).variance[graph.index("X20")]
    assert math.fsum(report.shapley) == pytest.approx(variance, rel=1e-10)
    assert math.fsum(report.criticality) == pytest.approx(1.0, abs=1e-10)
    assert report.shapley_of("e_X19") == 0.0


def test_scale_equivariance(fig4_graph):
    theta = _fig4_theta(fig4_graph)
    base = sv_closed_form(fig4_graph, theta, "X7")
    scaled = sv_closed_form(fig4_graph, theta.scaled(3.0), "X7")
    np.testing.assert_allclose(scaled.shapley, 9.0 * base.shapley, rtol=1e-12)
    np.testing.assert_allclose(scaled.criticality, base.criticality, rtol=1e-12)


def test_null_player_gets_zero():
    graph = build_graph([("X1", "CPP"), ("X2", "CPP"), ("X3", "CQA")], [("X1", "X3")])
    theta = Theta.from_arrays(graph, [0.0, 0.0, 0.0], [1.0, 4.0, 1.0], [2.0])
    report = sv_closed_form(graph, theta, "X3")
    assert report.shapley_of("X2") == 0.0
    assert report.ranking()[0].label == "X1"


def test_cpp_output_is_rejected(fig4_graph):
    with pytest.raises(TargetIsCpp):
        sv_closed_form(fig4_graph, _fig4_theta(fig4_graph), "X1")


def test_user_covariance_must_be_psd():
    with pytest.raises(NotPositiveSemidefinite):
        InputCovariance.user([[1.0, 2.0], [2.0, 1.0]])


def test_negative_shapley_is_reported_with_sign(unit_chain):
    graph, theta = unit_chain
    cov = InputCovariance.user([[1.0, -0.9, 0.0], [-0.9, 1.0, 0.0], [0.0, 0.0, 1.0]])
    report = sv_closed_form(graph, theta, "X3", cov)
    assert report.shapley_of("X1") == pytest.approx(0.1)
    assert report.notes


def test_subgraph_production_stage(fig4_graph):
    theta = _fig4_theta(fig4_graph)
    report = subgraph_analysis(fig4_graph, theta, ["X3", "X6", "X7"], "X7", source="independent")
    assert [f.label for f in report.factors] == ["X3", "X6", "e_X7"]
    var_x6 = 0.25 * 0.01 + 0.04 * 6.25 + 0.5
    np.testing.assert_allclose(report.shapley, [0.09 * 1.0, 0.81 * var_x6, 0.25], rtol=1e-12)
    modelled = subgraph_analysis(fig4_graph, theta, ["X3", "X6", "X7"], "X7", source="model")
    np.testing.assert_allclose(modelled.shapley, report.shapley, rtol=1e-12)


def test_subgraph_of_whole_graph_matches_closed_form(fig4_graph):
    theta = _fig4_theta(fig4_graph)
    whole = subgraph_analysis(fig4_graph, theta, fig4_graph.names, "X7")
    np.testing.assert_allclose(whole.shapley, sv_closed_form(fig4_graph, theta, "X7").shapley, rtol=1e-12)


def test_subgraph_correlated_inputs(mabs):
    graph, theta = mabs
    nodes = ["X14", "X15", "X16", "X17", "X18", "X19", "X20"]
    report = subgraph_analysis(graph, theta, nodes, "X20", source="model")
    assert [f.label for f in report.factors][:5] == ["X14", "X15", "X16", "X17", "X18"]
    assert math.fsum(report.shapley) == pytest.approx(node_moments(graph, theta).variance[graph.index("X20")], rel=1e-9)
    cqa_share = sum(report.criticality_of(name) for name in ("X14", "X15", "X16"))
    assert 0.85 < cqa_share < 0.97


def test_subgraph_data_covariance(fig4_graph):
    theta = _fig4_theta(fig4_graph)
    data = forward_sample(fig4_graph, theta, 2000, seed=9)
    report = subgraph_analysis(fig4_graph, theta, ["X3", "X6", "X7"], "X7", source="data", data=data)
    assert report.covariance_mode == CovarianceMode.DATA.value
    assert report.meta["data_rows"] == 2000
    model = subgraph_analysis(fig4_graph, theta, ["X3", "X6", "X7"], "X7", source="model")
    np.testing.assert_allclose(report.shapley, model.shapley, rtol=0.15, atol=0.02)


def test_subgraph_output_must_be_inside(fig4_graph):
    with pytest.raises(OutputNotInSubgraph):
        subgraph_analysis(fig4_graph, _fig4_theta(fig4_graph), ["X1", "X2", "X6"], "X7")


def test_pick_freeze_agrees_with_exact_cost(fig4_graph):
    theta = _fig4_theta(fig4_graph)
    for subset in (["X2"], ["X3", "e_X6"]):
        exact = cost_remaining_variance(fig4_graph, theta, "X7", subset)
        estimate, se = mc_cost_remaining_variance(fig4_graph, theta, "X7", subset, 200_000, seed=4)
        assert abs(estimate - exact) < 4.0 * se


def test_report_roundtrip(fig4_graph):
    report = sv_closed_form(fig4_graph, _fig4_theta(fig4_graph), "X7")
    restored = SvReport.from_dict(fig4_graph, report.to_dict())
    assert restored.factors == report.factors
    np.testing.assert_array_equal(restored.shapley, report.shapley)
    assert list(report.to_frame()["factor"]) == ["X1", "X2", "X3", "e_X6", "e_X7"]


def test_empty_dataset_has_no_covariance(fig4_graph):
    empty = BatchDataset.empty(fig4_graph.names)
    with pytest.raises(BnShapleyError):
        subgraph_analysis(fig4_graph, _fig4_theta(fig4_graph), ["X3", "X6", "X7"], "X7", source="data", data=empty)
