import pytest

from src.run_registry import RunRegistry


@pytest.fixture
def registry(tmp_path):
    registry = RunRegistry(str(tmp_path / "runs.db"))
    registry.create_db_if_not_there()
    return registry


def test_runs_are_listed_newest_first(registry):
    first = registry.start_run("simulate", {"batches": 30}, seed=7)
    second = registry.start_run("fit", {"thin": 2})
    registry.finish_run(first, 0)
    rows = registry.get_all_runs()
    assert [row[0] for row in rows] == [second, first]
    assert rows[1][1:4] == ("simulate", 7, 0)
    assert rows[0][3] is None


def test_get_run_parses_arguments(registry):
    run_id = registry.start_run("sv", {"output_node": "X20", "top": None}, seed=None)
    run = registry.get_run(run_id)
    assert run["command"] == "sv"
    assert run["arguments"] == {"output_node": "X20", "top": None}
    assert registry.get_run(run_id + 1) is None


def test_artifacts_follow_their_run(registry, tmp_path):
    run_id = registry.start_run("fit", {})
    registry.save_artifact(run_id, "draws", tmp_path / "draws.csv", "ab" * 32)
    registry.save_artifact(run_id, "diagnostics", tmp_path / "diag.csv", "cd" * 32)
    artifacts = registry.get_artifacts_by_run(run_id)
    assert [kind for kind, _, _ in artifacts] == ["draws", "diagnostics"]
    assert artifacts[0][1] == str(tmp_path / "draws.csv")

    assert registry.delete_run(run_id)
    assert registry.get_artifacts_by_run(run_id) == []
    assert not registry.delete_run(run_id)


def test_missing_run_id_is_ignored(registry):
    registry.finish_run(None, 0)
    registry.save_artifact(None, "data", "x.csv", "00")
    assert registry.get_all_runs() == []


def test_unreadable_ledger_returns_nothing(tmp_path):
    registry = RunRegistry(str(tmp_path / "never-created.db"))
    assert registry.get_all_runs() == []
    assert registry.start_run("sv", {}) is None
