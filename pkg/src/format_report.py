"""
This module renders analysis results as plain-text tables for the terminal.

Functions:
- render_sv_report(report): Criticality table of an SvReport, largest first.
- render_posterior_summary(summary): Posterior mean (sd) of Sh and criticality.
- render_mu_report(report): Per-coefficient share of the posterior variance.
- render_theta(graph, theta): Coefficient listing.
- render_runs(rows) / render_artifacts(rows): Run ledger listings.
- run_age_label(timestamp): Age of a run-ledger row.

Dependencies:
- tabulate (Table layout)
- datetime (Handling timestamps)
"""

from datetime import datetime, timedelta, timezone

from tabulate import tabulate


def _percent(value):
    return f"{100.0 * value:.2f}"


def render_sv_report(report, top=None):
    """Factors ranked by criticality with Shapley values and percentages."""
    frame = report.to_frame().sort_values("criticality", ascending=False, kind="stable")
    if top:
        frame = frame.head(top)
    rows = [
        (row.factor, row.kind, f"{row.shapley:.6g}", _percent(row.criticality))
        for row in frame.itertuples(index=False)
    ]
    table = tabulate(rows, headers=["factor", "kind", "Sh", "p (%)"], tablefmt="github")
    header = f"Output {report.output.name}: Var = {report.total_variance:.6g} ({report.covariance_mode} inputs)"
    notes = "".join(f"\nnote: {note}" for note in report.notes)
    return f"{header}\n{table}{notes}"


def render_posterior_summary(summary, top=None):
    frame = summary.to_frame().sort_values("p_mean", ascending=False, kind="stable")
    if top:
        frame = frame.head(top)
    rows = [
        (
            row.factor,
            f"{row.sh_mean:.6g} ({row.sh_sd:.3g})",
            f"{_percent(row.p_mean)} ({_percent(row.p_sd)})",
        )
        for row in frame.itertuples(index=False)
    ]
    table = tabulate(rows, headers=["factor", "E[Sh] (sd)", "E[p] % (sd)"], tablefmt="github")
    return f"Output {summary.output.name}: posterior over B = {summary.n_draws} draws\n{table}"


def render_mu_report(report):
    """Coefficients ranked by their share of Var*[quantity]."""
    frame = report.to_frame()
    if "proportion" in frame:
        frame = frame.sort_values("proportion", ascending=False, kind="stable")
    rows = []
    for row in frame.itertuples(index=False):
        share = _percent(row.proportion) if "proportion" in frame else "n/a"
        se = _percent(row.se / report.total) if report.total else "n/a"
        rows.append((row.coefficient, f"{row.contribution:.4g}", f"{share} ± {se}"))
    table = tabulate(rows, headers=["coefficient", "contribution", "share (%)"], tablefmt="github")
    header = (
        f"{report.quantity.value}({report.factor.label}, {report.output.name}): "
        f"Var* = {report.total:.6g}, N_pi = {report.meta.get('n_perm')}"
    )
    return f"{header}\n{table}"


def render_theta(graph, theta):
    rows = [(f"mu[{name}]", f"{theta.mu[k]:.6g}") for k, name in enumerate(graph.names)]
    rows += [(f"v2[{name}]", f"{theta.v2[k]:.6g}") for k, name in enumerate(graph.names)]
    rows += [
        (f"beta[{graph.nodes[p].name}->{graph.nodes[c].name}]", f"{theta.beta[(p, c)]:.6g}")
        for p, c in graph.edges
    ]
    return tabulate(rows, headers=["coefficient", "value"], tablefmt="github")


def render_runs(rows):
    table = [
        (run_id, command, seed if seed is not None else "", status, run_age_label(timestamp))
        for run_id, command, seed, status, timestamp in rows
    ]
    return tabulate(table, headers=["run", "command", "seed", "status", "when"], tablefmt="github")


def render_artifacts(rows):
    return tabulate(
        [(kind, path, digest[:12]) for kind, path, digest in rows],
        headers=["kind", "path", "sha256"],
        tablefmt="github",
    )


def run_age_label(timestamp, now=None):
    """
    Age of a ledger row: "just now", "12 min ago", "5 h ago", "3 d ago", then
    the UTC minute "YYYY-MM-DD HH:MM" once a run is a week old.

    `timestamp` is SQLite's CURRENT_TIMESTAMP text (UTC); anything that does not
    parse is shown as is.
    """
    if isinstance(timestamp, str):
        try:
            timestamp = datetime.strptime(timestamp, "%Y-%m-%d %H:%M:%S")
        except ValueError:
            return timestamp
    now = now or datetime.now(timezone.utc).replace(tzinfo=None)
    age = now - timestamp
    if age < timedelta(minutes=1):
        return "just now"
    if age < timedelta(hours=1):
        return f"{age // timedelta(minutes=1)} min ago"
    if age < timedelta(days=1):
        return f"{age // timedelta(hours=1)} h ago"
    if age < timedelta(days=7):
        return f"{age.days} d ago"
    return timestamp.strftime("%Y-%m-%d %H:%M")
