import pytest

from src.bn_model import NodeKind, Theta, build_graph
from src.simgen import build_mabs_network


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale reproduction checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def unit_chain():
    graph = build_graph([("X1", "CPP"), ("X2", "CQA"), ("X3", "CQA")], [("X1", "X2"), ("X2", "X3")])
    theta = Theta.from_names(
        graph,
        {"X1": 0.0, "X2": 0.0, "X3": 0.0},
        {"X1": 1.0, "X2": 1.0, "X3": 1.0},
        {("X1", "X2"): 1.0, ("X2", "X3"): 1.0},
    )
    return graph, theta


@pytest.fixture
def diamond():
    graph = build_graph(
        [("X1", "CPP"), ("X2", "CQA"), ("X3", "CQA"), ("X4", "RESPONSE")],
        [("X1", "X2"), ("X1", "X3"), ("X2", "X4"), ("X3", "X4"), ("X1", "X4")],
    )
    theta = Theta.from_names(
        graph,
        {"X1": 1.0, "X2": 2.0, "X3": 3.0, "X4": 4.0},
        {"X1": 1.0, "X2": 0.5, "X3": 0.25, "X4": 2.0},
        {("X1", "X2"): 0.5, ("X2", "X4"): 2.0, ("X1", "X3"): 1.0, ("X3", "X4"): 0.25, ("X1", "X4"): 0.1},
    )
    return graph, theta


@pytest.fixture
def fig4_graph():
    return build_graph(
        [("X1", "CPP"), ("X2", "CPP"), ("X3", "CPP"), ("X6", "CQA"), ("X7", "RESPONSE")],
        [("X1", "X6"), ("X2", "X6"), ("X6", "X7"), ("X3", "X7")],
    )


@pytest.fixture
def random_theta():
    """Factory: random θ for a graph (v² in [0.2, 2], β in [-1.5, 1.5])."""

    def make(graph, rng):
        return Theta.from_arrays(
            graph,
            rng.normal(0.0, 3.0, len(graph)),
            rng.uniform(0.2, 2.0, len(graph)),
            rng.uniform(-1.5, 1.5, len(graph.edges)),
        )

    return make


@pytest.fixture
def random_dag():
    """Factory: random DAG with n_cpp CPPs and n_cqa CQAs; every CQA has at least one parent."""

    def make(rng, n_cpp, n_cqa, edge_prob=0.5):
        names = [f"X{i + 1}" for i in range(n_cpp + n_cqa)]
        kinds = [NodeKind.CPP] * n_cpp + [NodeKind.CQA] * n_cqa
        edges = []
        for child in range(n_cpp, n_cpp + n_cqa):
            parents = [p for p in range(child) if rng.random() < edge_prob]
            if not parents:
                parents = [int(rng.integers(0, child))]
            edges.extend((names[p], names[child]) for p in parents)
        return build_graph(list(zip(names, kinds)), edges)

    return make


@pytest.fixture(scope="session")
def mabs():
    return build_mabs_network()
