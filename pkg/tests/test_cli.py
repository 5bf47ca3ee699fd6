import json
import math
from pathlib import Path

import numpy as np
import pytest

from src.bn_model import NodeKind, Theta, build_graph
from src.cli import cli_run
from src.exceptions import BnShapleyError
from src.network_io import load_draws, load_network, load_report, save_network
from src.run_registry import RunRegistry

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
FIG4 = str(DATA_DIR / "fig4_network.json")


def _run(tmp_path, *args):
    return cli_run(["--db", str(tmp_path / "runs.db"), *[str(a) for a in args]])


def _error(capsys):
    err = capsys.readouterr().err
    return json.loads(err.strip().splitlines()[-1])


def test_simulate_is_reproducible(tmp_path):
    for name in ("a.csv", "b.csv"):
        status = cli_run(["--no-ledger", "simulate", "--batches", "12", "--seed", "7", "--out", str(tmp_path / name)])
        assert status == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert not (tmp_path / "runs.db").exists()


def test_fig4_pipeline(tmp_path, capsys):
    data, draws = tmp_path / "batches.csv", tmp_path / "draws.csv"
    sv_path, summary, mu_path = tmp_path / "sv.json", tmp_path / "summary.json", tmp_path / "mu.json"
    assert _run(
        tmp_path, "simulate", "--network", FIG4, "--batches", 40, "--incomplete", 10,
        "--subgraph", "X1,X2,X3,X6", "--seed", 1, "--out", data,
    ) == 0
    assert _run(
        tmp_path, "fit", "--network", FIG4, "--data", data, "--iters", 60, "--burnin", 20, "--thin", 2,
        "--seed", 2, "--diagnostics", tmp_path / "diag.csv", "--out", draws,
    ) == 0
    graph = load_network(FIG4).graph
    assert len(load_draws(draws, graph)) == 20
    assert "beta[X6->X7]" in capsys.readouterr().out

    assert _run(tmp_path, "sv", "--network", FIG4, "--output-node", "X7", "--out", sv_path) == 0
    assert _run(tmp_path, "sv", "--network", FIG4, "--draws", draws, "--output-node", "X7", "--out", summary) == 0
    assert load_report(summary, graph).n_draws == 20
    assert _run(
        tmp_path, "sv", "--network", FIG4, "--output-node", "X7", "--subgraph", "production",
        "--out", tmp_path / "production.json",
    ) == 0
    assert [f.label for f in load_report(tmp_path / "production.json", graph).factors] == ["X3", "X6", "e_X7"]

    assert _run(
        tmp_path, "musa", "--network", FIG4, "--draws", draws, "--data", data, "--input-factor", "X2",
        "--output-node", "X7", "--npi", 2, "--bo", 2, "--bi", 3, "--inner-thin", 1, "--seed", 3, "--out", mu_path,
    ) == 0
    mu_report = load_report(mu_path, graph)
    assert [c.label for c in mu_report.coefficients] == ["v2[X2]", "beta[X2->X6]", "beta[X6->X7]"]
    assert math.fsum(mu_report.contributions) == mu_report.total

    assert _run(
        tmp_path, "dot", "--network", FIG4, "--report", sv_path, "--mu-report", mu_path, "--out", tmp_path / "g.dot"
    ) == 0
    assert (tmp_path / "g.dot").read_text(encoding="utf-8").startswith("digraph")

    registry = RunRegistry(str(tmp_path / "runs.db"))
    runs = registry.get_all_runs()
    assert [row[1] for row in runs][::-1] == ["simulate", "fit", "sv", "sv", "sv", "musa", "dot"]
    assert all(row[3] == 0 for row in runs)
    fit_run = registry.get_run(runs[-2][0])
    assert fit_run["seed"] == 2
    assert [kind for kind, _, _ in registry.get_artifacts_by_run(fit_run["id"])] == ["draws", "diagnostics"]


def test_library_errors_become_json(tmp_path, capsys):
    status = _run(tmp_path, "sv", "--network", FIG4, "--output-node", "X1", "--out", tmp_path / "sv.json")
    assert status == 1
    record = _error(capsys)
    assert record["error"] == "TargetIsCpp"
    assert record["node"] == "X1"
    assert not (tmp_path / "sv.json").exists()
    assert RunRegistry(str(tmp_path / "runs.db")).get_all_runs()[0][3] == 1


def test_bad_data_reports_row(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("X1,X2,X3,X6,X7\n1,2,3,4,5\n1,2,x,4,5\n", encoding="utf-8")
    status = _run(tmp_path, "fit", "--network", FIG4, "--data", path, "--out", tmp_path / "draws.csv")
    assert status == 1
    record = _error(capsys)
    assert (record["error"], record["row"], record["col"]) == ("NonNumericCell", 2, "X3")


def _fit_fig4(tmp_path):
    data, draws = tmp_path / "batches.csv", tmp_path / "draws.csv"
    assert _run(tmp_path, "--no-ledger", "simulate", "--network", FIG4, "--batches", 20, "--seed", 1, "--out", data) == 0
    assert _run(
        tmp_path, "--no-ledger", "fit", "--network", FIG4, "--data", data, "--iters", 20, "--burnin", 10,
        "--thin", 1, "--seed", 2, "--out", draws,
    ) == 0
    return data, draws


@pytest.mark.parametrize(
    "args, argument",
    [
        (("simulate", "--network", FIG4, "--batches", 0), "batches"),
        (("mse", "--network", FIG4, "--sizes", "10,x"), "sizes"),
        (("mse", "--network", FIG4, "--sizes", ","), "sizes"),
        (("mse", "--network", FIG4, "--sizes", "10,0"), "sizes"),
    ],
)
def test_bad_arguments_become_json(tmp_path, capsys, args, argument):
    status = _run(tmp_path, *args, "--out", tmp_path / "out.csv")
    assert status == 1
    record = _error(capsys)
    assert (record["error"], record["argument"]) == ("InvalidArgument", argument)
    assert not (tmp_path / "out.csv").exists()
    assert RunRegistry(str(tmp_path / "runs.db")).get_all_runs()[0][3] == 1


def test_musa_needs_a_permutation(tmp_path, capsys):
    data, draws = _fit_fig4(tmp_path)
    capsys.readouterr()
    status = _run(
        tmp_path, "musa", "--network", FIG4, "--draws", draws, "--data", data, "--input-factor", "X2",
        "--output-node", "X7", "--npi", 0, "--out", tmp_path / "mu.json",
    )
    assert status == 1
    assert _error(capsys)["argument"] == "n_perm"
    assert not (tmp_path / "mu.json").exists()


def test_malformed_prior_file(tmp_path, capsys):
    data, _ = _fit_fig4(tmp_path)
    prior = tmp_path / "prior.json"
    prior.write_text("{}", encoding="utf-8")
    capsys.readouterr()
    status = _run(
        tmp_path, "fit", "--network", FIG4, "--data", data, "--prior-file", prior, "--out", tmp_path / "d.csv"
    )
    assert status == 1
    record = _error(capsys)
    assert (record["error"], record["argument"]) == ("InvalidArgument", "prior")


def test_failed_diagnostics_write_nothing(tmp_path, capsys, monkeypatch):
    data, _ = _fit_fig4(tmp_path)

    def broken(draws, graph):
        raise BnShapleyError("chain too short")

    monkeypatch.setattr("src.cli.chain_diagnostics", broken)
    capsys.readouterr()
    status = _run(
        tmp_path, "fit", "--network", FIG4, "--data", data, "--iters", 20, "--burnin", 10, "--thin", 1,
        "--diagnostics", tmp_path / "diag.csv", "--out", tmp_path / "fresh.csv",
    )
    assert status == 1
    assert _error(capsys)["error"] == "BnShapleyError"
    assert not (tmp_path / "fresh.csv").exists()
    assert not (tmp_path / "diag.csv").exists()


def test_structure_only_network_cannot_simulate(tmp_path):
    status = _run(tmp_path, "simulate", "--network", DATA_DIR / "mabs_network.json", "--out", tmp_path / "x.csv")
    assert status == 2


def test_builtin_network_ranking(tmp_path, capsys):
    assert _run(tmp_path, "--no-ledger", "sv", "--output-node", "X20", "--top", 3, "--out", tmp_path / "sv.json") == 0
    out = capsys.readouterr().out
    lines = [line for line in out.splitlines() if line.startswith("| X")]
    assert [line.split("|")[1].strip() for line in lines] == ["X4", "X13", "X1"]


def test_mse_command(tmp_path, capsys):
    out = tmp_path / "mse.csv"
    status = _run(
        tmp_path, "mse", "--network", FIG4, "--sizes", "10,40", "--replications", 2, "--draws", 5,
        "--burnin", 5, "--thin", 1, "--out", out,
    )
    assert status == 0
    assert out.read_text(encoding="utf-8").splitlines()[0] == "n_rows,group,mse,se"
    assert "| n_rows" in capsys.readouterr().out


def test_history_commands(tmp_path, capsys):
    _run(tmp_path, "simulate", "--batches", 5, "--seed", 1, "--out", tmp_path / "a.csv")
    capsys.readouterr()
    assert _run(tmp_path, "history") == 0
    assert "simulate" in capsys.readouterr().out
    assert _run(tmp_path, "history", "--run", 1) == 0
    assert "a.csv" in capsys.readouterr().out
    assert _run(tmp_path, "history", "--delete", 1) == 0
    assert "deleted run 1" in capsys.readouterr().out
    assert _run(tmp_path, "history", "--run", 1) == 2


def _synthetic_network(path, n_cpp=12, n_cqa=50, seed=62):
    rng = np.random.default_rng(seed)
    names = [f"N{i + 1}" for i in range(n_cpp + n_cqa)]
    kinds = [NodeKind.CPP] * n_cpp + [NodeKind.CQA] * (n_cqa - 1) + [NodeKind.RESPONSE]
    edges = []
    for child in range(n_cpp, len(names)):
        for parent in rng.choice(child, size=min(child, int(rng.integers(1, 3))), replace=False):
            edges.append((names[int(parent)], names[child]))
    graph = build_graph(list(zip(names, kinds)), edges)
    theta = Theta.from_arrays(
        graph, rng.normal(0.0, 5.0, len(names)), rng.uniform(0.5, 1.5, len(names)), rng.uniform(-0.4, 0.4, len(edges))
    )
    save_network(graph, theta, path, subgraphs={"front": names[:30]})
    return graph


def test_large_network_end_to_end(tmp_path):
    network = tmp_path / "net62.json"
    graph = _synthetic_network(network)
    assert len(graph) == 62
    data, draws = tmp_path / "data.csv", tmp_path / "draws.csv"
    assert _run(
        tmp_path, "simulate", "--network", network, "--batches", 40, "--incomplete", 20,
        "--subgraph", "front", "--seed", 5, "--out", data,
    ) == 0
    assert _run(
        tmp_path, "fit", "--network", network, "--data", data, "--iters", 30, "--burnin", 10, "--thin", 2,
        "--seed", 6, "--out", draws,
    ) == 0
    assert _run(
        tmp_path, "sv", "--network", network, "--draws", draws, "--output-node", "N62", "--out", tmp_path / "sv.json"
    ) == 0
    assert _run(
        tmp_path, "musa", "--network", network, "--draws", draws, "--data", data, "--input-factor", "e_N62",
        "--output-node", "N62", "--npi", 2, "--bo", 2, "--bi", 2, "--inner-thin", 1, "--seed", 7,
        "--out", tmp_path / "mu.json",
    ) == 0
