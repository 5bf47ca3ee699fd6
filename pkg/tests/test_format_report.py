from datetime import datetime, timedelta

import numpy as np

from src.format_report import (
    render_artifacts,
    render_mu_report,
    render_runs,
    render_sv_report,
    render_theta,
    run_age_label,
)
from src.mu_sa import MuReport, Quantity, theta_path_set
from src.shapley import sv_closed_form


def test_sv_table_is_ranked(diamond):
    graph, theta = diamond
    report = sv_closed_form(graph, theta, "X4")
    text = render_sv_report(report, top=2)
    assert text.startswith("Output X4: Var = ")
    body = [line for line in text.splitlines()[3:] if line.startswith("|")]
    assert len(body) == 2
    assert body[0].split("|")[1].strip() == report.ranking()[0].label


def test_theta_listing(unit_chain):
    graph, theta = unit_chain
    lines = render_theta(graph, theta).splitlines()
    assert len(lines) == 2 + 3 + 3 + 2
    assert lines[-1].split("|")[1].strip() == "beta[X2->X3]"


def test_mu_table_shows_shares(unit_chain):
    graph, theta = unit_chain
    report = MuReport(
        factor=sv_closed_form(graph, theta, "X3").factors[0],
        output=graph.node("X3"),
        quantity=Quantity.SHAPLEY,
        total=2.0,
        coefficients=theta_path_set(graph, "X1", "X3"),
        contributions=np.array([0.5, 1.0, 0.5]),
        contribution_se=np.array([0.1, 0.1, 0.1]),
        meta={"n_perm": 4},
    )
    text = render_mu_report(report)
    rows = [line for line in text.splitlines() if line.startswith("| beta") or line.startswith("| v2")]
    assert rows[0].split("|")[1].strip() == "beta[X1->X2]"
    assert "50.00 ± 5.00" in rows[0]
    assert "N_pi = 4" in text.splitlines()[0]


def test_ledger_tables():
    runs = render_runs([(2, "sv", None, 1, "2001-02-03 04:05:06"), (1, "simulate", 7, 0, "not a date")])
    assert "2001-02-03" in runs
    assert "not a date" in runs
    artifacts = render_artifacts([("draws", "out/draws.csv", "f" * 64)])
    assert "f" * 12 in artifacts
    assert "f" * 13 not in artifacts


def test_run_age_labels():
    now = datetime(2026, 3, 10, 12, 0, 0)
    assert run_age_label(now, now=now) == "just now"
    assert run_age_label("2026-03-10 11:47:30", now=now) == "12 min ago"
    assert run_age_label(now - timedelta(hours=5, minutes=59), now=now) == "5 h ago"
    assert run_age_label(now - timedelta(days=3, hours=2), now=now) == "3 d ago"
    assert run_age_label("2026-02-01 08:30:00", now=now) == "2026-02-01 08:30"
    assert run_age_label("yesterday", now=now) == "yesterday"
