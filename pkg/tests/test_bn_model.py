import numpy as np
import pytest

from src.bn_model import (
    FactorKind,
    InputFactor,
    IssueKind,
    NodeKind,
    Theta,
    build_graph,
    input_factors,
    validate_theta,
)
from src.exceptions import CycleDetected, DuplicateName, EdgeIntoCpp, InvalidTheta, UnknownName


def test_minimal_chain():
    graph = build_graph([("X1", "CPP"), ("X2", "CQA")], [("X1", "X2")])
    assert graph.topo == (0, 1)
    assert graph.parents("X2") == (0,)
    assert graph.children("X1") == (1,)
    assert graph.kind("X2") is NodeKind.CQA


def test_edge_into_cpp_is_rejected():
    with pytest.raises(EdgeIntoCpp) as info:
        build_graph([("X1", "CPP"), ("X2", "CPP")], [("X1", "X2")])
    assert info.value.edge == ("X1", "X2")


def test_cycle_reports_offending_edges():
    nodes = [("X1", "CPP"), ("A", "CQA"), ("B", "CQA"), ("C", "CQA")]
    edges = [("X1", "A"), ("A", "B"), ("B", "C"), ("C", "A")]
    with pytest.raises(CycleDetected) as info:
        build_graph(nodes, edges)
    assert set(info.value.edges) == {("A", "B"), ("B", "C"), ("C", "A")}


def test_cycle_excludes_edges_leaving_the_loop():
    nodes = [("X1", "CPP"), ("A", "CQA"), ("B", "CQA"), ("C", "CQA")]
    edges = [("X1", "A"), ("A", "B"), ("B", "A"), ("B", "C")]
    with pytest.raises(CycleDetected) as info:
        build_graph(nodes, edges)
    assert set(info.value.edges) == {("A", "B"), ("B", "A")}


def test_self_loop_is_a_cycle():
    with pytest.raises(CycleDetected):
        build_graph([("A", "CQA")], [("A", "A")])


def test_duplicate_and_unknown_names():
    with pytest.raises(DuplicateName):
        build_graph([("X1", "CPP"), ("X1", "CQA")], [])
    with pytest.raises(UnknownName):
        build_graph([("X1", "CPP")], [("X1", "X9")])


def test_topological_ties_follow_declaration_order():
    graph = build_graph([("B", "CQA"), ("A", "CPP"), ("C", "CPP")], [("A", "B")])
    assert graph.topo == (1, 0, 2)
    graph = build_graph([("X1", "CPP"), ("X2", "CPP"), ("X3", "CQA")], [])
    assert graph.topo == (0, 1, 2)
    graph = build_graph(
        [("D", "CQA"), ("C", "CQA"), ("X2", "CPP"), ("X1", "CPP")],
        [("X1", "C"), ("X2", "D"), ("C", "D")],
    )
    assert [graph.names[k] for k in graph.topo] == ["X2", "X1", "C", "D"]


def test_graph_without_edges():
    graph = build_graph([("X1", "CPP"), ("X2", "CQA")], [])
    assert graph.edges == ()
    assert graph.parents("X2") == ()
    assert [f.label for f in input_factors(graph)] == ["X1", "e_X2"]


def test_fig4_input_factors(fig4_graph):
    factors = input_factors(fig4_graph)
    assert [f.label for f in factors] == ["X1", "X2", "X3", "e_X6", "e_X7"]
    assert factors[3].kind is FactorKind.RESIDUAL
    assert factors[3] == InputFactor.residual(fig4_graph.node("X6"))


def test_reachability(fig4_graph):
    names = fig4_graph.names
    assert {names[k] for k in fig4_graph.ancestors("X7")} == {"X1", "X2", "X3", "X6"}
    assert {names[k] for k in fig4_graph.descendants("X1")} == {"X6", "X7"}
    assert fig4_graph.is_parent_closed(["X1", "X2", "X6"])
    assert {names[k] for k in fig4_graph.missing_parents(["X6", "X7"])} == {"X1", "X2", "X3"}


def test_parent_sets_equal_declared_edges(mabs):
    graph, _ = mabs
    rebuilt = {(p, c) for c in range(len(graph)) for p in graph.parents(c)}
    assert rebuilt == set(graph.edges)
    for p, c in graph.edges:
        assert graph.rank(p) < graph.rank(c)


def test_weight_matrix(diamond):
    graph, theta = diamond
    matrix = graph.weight_matrix(theta)
    assert matrix[graph.index("X1"), graph.index("X4")] == 0.1
    assert np.count_nonzero(matrix) == len(graph.edges)


def test_theta_validation_accepts_valid(diamond):
    graph, theta = diamond
    assert validate_theta(graph, theta).ok
    assert theta.checked(graph) is theta


def test_theta_validation_lists_every_problem(diamond):
    graph, theta = diamond
    v2 = np.array(theta.v2)
    v2[3] = 0.0
    beta = dict(theta.beta)
    del beta[(0, 1)]
    beta[(1, 2)] = 1.0
    result = validate_theta(graph, theta.replace(v2=v2, beta=beta))
    assert not result.ok
    assert set(result.kinds()) == {IssueKind.NON_POSITIVE_VARIANCE, IssueKind.MISSING_BETA, IssueKind.EXTRA_BETA}
    assert result.issues[0].where == 3


def test_theta_checked_raises(diamond):
    graph, theta = diamond
    with pytest.raises(InvalidTheta) as info:
        theta.replace(v2=np.array([1.0, 1.0, -1.0, 1.0])).checked(graph)
    assert info.value.issues[0].kind is IssueKind.NON_POSITIVE_VARIANCE


def test_theta_is_immutable_and_comparable(diamond):
    graph, theta = diamond
    with pytest.raises(ValueError):
        theta.mu[0] = 5.0
    same = Theta.from_arrays(graph, theta.mu, theta.v2, theta.beta_vector(graph))
    assert same == theta
    assert theta.scaled(2.0) != theta
    np.testing.assert_allclose(theta.scaled(2.0).v2, 4.0 * theta.v2)


def test_theta_to_dict_names(fig4_graph):
    theta = Theta.from_arrays(fig4_graph, np.zeros(5), np.ones(5), [0.5, 0.2, 0.9, 0.3])
    record = theta.to_dict(fig4_graph)
    assert record["mu"]["X6"] == 0.0
    assert record["beta"][2] == {"parent": "X6", "child": "X7", "beta": 0.9}
