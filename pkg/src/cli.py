"""
Command-line surface of bn-shapley.

Commands:
- simulate: network -> batch CSV (complete and top-sub-graph rows)
- fit:      network + CSV -> posterior draws file
- sv:       network θ or draws -> Shapley / criticality report
- musa:     draws + CSV -> model-uncertainty attribution report
- dot:      reports -> annotated DOT graph
- mse:      Gibbs convergence study over batch sizes
- history:  list, inspect or delete ledger runs

Library errors are printed to stderr as one JSON object and the process exits
with status 1. Every run and the files it writes are recorded in the SQLite
ledger unless --no-ledger is given.

Dependencies:
- click (Command-line parsing)
"""

import json
import logging
import sys

import click

from .exceptions import BnShapleyError, InvalidArgument
from .format_report import (
    render_artifacts,
    render_mu_report,
    render_posterior_summary,
    render_runs,
    render_sv_report,
    render_theta,
)
from .inference import Prior, chain_diagnostics, default_prior, gibbs_sample, mse_study
from .mu_sa import MuReport, appro_shapley_mu, posterior_sv_summary
from .network_io import (
    atomic_write,
    export_dot,
    file_sha256,
    load_data,
    load_draws,
    load_network,
    load_report,
    save_data,
    save_draws,
    save_report,
)
from .run_registry import RunRegistry
from .shapley import sv_closed_form, subgraph_analysis
from .simgen import build_mabs_network, generate_batches, mabs_subgraphs
from .utils import config

BUILTIN_NETWORK = "mabs"


# === Helpers ===
def _load_network(spec):
    if spec == BUILTIN_NETWORK:
        graph, theta = build_mabs_network()
        return graph, theta, mabs_subgraphs(graph)
    return load_network(spec)


def _require_theta(theta, spec):
    if theta is None:
        raise click.UsageError(f"network {spec!r} does not declare every coefficient")
    return theta


def _resolve_subgraph(graph, subgraphs, value):
    if value is None:
        return None
    if value in subgraphs:
        return list(subgraphs[value])
    return [graph.node(name.strip()).name for name in value.split(",") if name.strip()]


def _begin(ctx):
    """Record the current command in the run ledger."""
    state = ctx.find_root().obj
    registry = state.get("registry")
    if registry is not None:
        state["run_id"] = registry.start_run(ctx.info_name, ctx.params, ctx.params.get("seed"))


def _written(ctx, kind, path):
    state = ctx.find_root().obj
    registry = state.get("registry")
    if registry is not None:
        registry.save_artifact(state.get("run_id"), kind, path, file_sha256(path))
    click.echo(f"wrote {kind}: {path}")


def _prior(graph, data, prior_file, mu_var, beta_var, kappa, lam):
    if prior_file:
        with open(prior_file, "r", encoding="utf-8") as handle:
            try:
                return Prior.from_dict(graph, json.load(handle))
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidArgument("prior", f"{prior_file}: malformed prior ({exc!r})") from exc
    return default_prior(graph, data, mu_var=mu_var, beta_var=beta_var, kappa=kappa, lam=lam)


def prior_options(command):
    """Attach the prior override flags to a command."""
    options = [
        click.option("--prior-file", type=click.Path(exists=True, dir_okay=False), help="Prior hyperparameters (JSON)."),
        click.option("--prior-mu-var", "mu_var", type=float, default=config.PRIOR_MEAN_VARIANCE, show_default=True),
        click.option("--prior-beta-var", "beta_var", type=float, default=config.PRIOR_BETA_VARIANCE, show_default=True),
        click.option("--prior-kappa", "kappa", type=float, default=config.PRIOR_KAPPA, show_default=True),
        click.option("--prior-lambda", "lam", type=float, default=config.PRIOR_LAMBDA, show_default=True),
    ]
    for option in reversed(options):
        command = option(command)
    return command


network_option = click.option(
    "--network",
    default=BUILTIN_NETWORK,
    show_default=True,
    help="Network document, or 'mabs' for the built-in mAbs network.",
)


# === Commands ===
@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
@click.option("--db", type=click.Path(dir_okay=False), default=None, help="Run ledger path (env BN_SHAPLEY_DB).")
@click.option("--no-ledger", is_flag=True, help="Do not record this run.")
@click.pass_context
def cli(ctx, verbose, db, no_ledger):
    """Shapley-value risk and sensitivity analysis for linear-Gaussian process networks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    ctx.ensure_object(dict)
    registry = RunRegistry(db)
    ctx.obj["history_registry"] = registry
    if not no_ledger and ctx.invoked_subcommand != "history":
        registry.create_db_if_not_there()
        ctx.obj["registry"] = registry


@cli.command()
@network_option
@click.option("--batches", type=int, default=30, show_default=True, help="Complete batches R1.")
@click.option("--incomplete", type=int, default=0, show_default=True, help="Top-sub-graph batches R2.")
@click.option("--subgraph", default=None, help="Named sub-graph or comma-separated nodes for incomplete rows.")
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def simulate(ctx, network, batches, incomplete, subgraph, seed, out):
    """Simulate batch data from a fully parameterized network."""
    _begin(ctx)
    graph, theta, subgraphs = _load_network(network)
    theta = _require_theta(theta, network)
    nodes = _resolve_subgraph(graph, subgraphs, subgraph)
    dataset = generate_batches(graph, theta, batches, incomplete, nodes, seed=seed)
    save_data(dataset, out)
    _written(ctx, "data", out)


@cli.command()
@network_option
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--iters", type=int, default=None, help="Total sweeps T (default burnin + 1000 * thin).")
@click.option("--burnin", type=int, default=config.GIBBS_BURNIN, show_default=True)
@click.option("--thin", type=int, default=config.GIBBS_THIN, show_default=True)
@click.option("--init", type=click.Choice(["moments", "prior"]), default="moments", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--diagnostics", type=click.Path(dir_okay=False), default=None, help="Write chain diagnostics CSV.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@prior_options
@click.pass_context
def fit(
    ctx, network, data_path, iters, burnin, thin, init, seed, diagnostics, out,
    prior_file, mu_var, beta_var, kappa, lam,
):
    """Sample the posterior of θ by Gibbs sampling."""
    _begin(ctx)
    graph, _, _ = _load_network(network)
    data = load_data(data_path, graph)
    prior = _prior(graph, data, prior_file, mu_var, beta_var, kappa, lam)
    draws = gibbs_sample(graph, prior, data, n_iter=iters, burnin=burnin, thin=thin, seed=seed, init=init)
    report = chain_diagnostics(draws, graph) if diagnostics else None
    save_draws(draws, graph, out)
    click.echo(render_theta(graph, draws.posterior_mean()))
    _written(ctx, "draws", out)
    if report is not None:
        atomic_write(diagnostics, report.to_csv())
        _written(ctx, "diagnostics", diagnostics)


@cli.command()
@network_option
@click.option("--draws", "draws_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--output-node", required=True)
@click.option("--subgraph", default=None, help="Named sub-graph or comma-separated nodes.")
@click.option("--cov", type=click.Choice(["independent", "model", "data"]), default="independent", show_default=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--top", type=int, default=None, help="Only print the top factors.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def sv(ctx, network, draws_path, output_node, subgraph, cov, data_path, top, out):
    """Shapley values and criticalities of every input factor for one output."""
    _begin(ctx)
    graph, theta, subgraphs = _load_network(network)
    if draws_path:
        if subgraph or cov != "independent":
            raise click.UsageError("--draws supports whole-graph analysis with independent inputs only")
        summary = posterior_sv_summary(load_draws(draws_path, graph), graph, output_node)
        save_report(summary, graph, out)
        click.echo(render_posterior_summary(summary, top))
        _written(ctx, "report", out)
        return

    theta = _require_theta(theta, network)
    nodes = _resolve_subgraph(graph, subgraphs, subgraph)
    if nodes is None and cov == "independent":
        report = sv_closed_form(graph, theta, output_node)
    else:
        data = load_data(data_path, graph) if data_path else None
        report = subgraph_analysis(graph, theta, nodes or list(graph.names), output_node, source=cov, data=data)
    save_report(report, graph, out)
    click.echo(render_sv_report(report, top))
    _written(ctx, "report", out)


@cli.command()
@network_option
@click.option("--draws", "draws_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input-factor", required=True, help="Input factor label, e.g. X4 or e_X6.")
@click.option("--output-node", required=True)
@click.option("--quantity", type=click.Choice(["shapley", "criticality"]), default="criticality", show_default=True)
@click.option("--npi", type=int, default=config.NESTED_PERMUTATIONS, show_default=True)
@click.option("--bo", type=int, default=config.NESTED_OUTER, show_default=True)
@click.option("--bi", type=int, default=config.NESTED_INNER, show_default=True)
@click.option("--inner-thin", type=int, default=config.NESTED_THIN, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@prior_options
@click.pass_context
def musa(
    ctx, network, draws_path, data_path, input_factor, output_node, quantity, npi, bo, bi, inner_thin, seed, out,
    prior_file, mu_var, beta_var, kappa, lam,
):
    """Attribute the posterior variance of Sh or p to individual coefficients."""
    _begin(ctx)
    graph, _, _ = _load_network(network)
    data = load_data(data_path, graph)
    draws = load_draws(draws_path, graph)
    prior = _prior(graph, data, prior_file, mu_var, beta_var, kappa, lam)
    report = appro_shapley_mu(
        graph, prior, data, input_factor, output_node, quantity,
        n_perm=npi, n_outer=bo, n_inner=bi, inner_thin=inner_thin, seed=seed, draws=draws,
    )
    save_report(report, graph, out)
    click.echo(render_mu_report(report))
    _written(ctx, "report", out)


@cli.command()
@network_option
@click.option("--report", "report_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mu-report", "mu_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def dot(ctx, network, report_path, mu_path, out):
    """Export the network as DOT, shaded by criticality and model uncertainty."""
    _begin(ctx)
    graph, _, _ = _load_network(network)
    report = load_report(report_path, graph)
    if isinstance(report, MuReport):
        raise click.UsageError("--report must be an SV report or posterior summary")
    mu_report = load_report(mu_path, graph) if mu_path else None
    if mu_report is not None and not isinstance(mu_report, MuReport):
        raise click.UsageError("--mu-report must be an MU report")
    export_dot(graph, report, mu_report, out)
    _written(ctx, "dot", out)


@cli.command()
@network_option
@click.option("--sizes", default="30,100,500", show_default=True, help="Comma-separated batch sizes.")
@click.option("--replications", type=int, default=20, show_default=True)
@click.option("--draws", "n_draws", type=int, default=config.GIBBS_DRAWS, show_default=True)
@click.option("--burnin", type=int, default=config.GIBBS_BURNIN, show_default=True)
@click.option("--thin", type=int, default=config.GIBBS_THIN, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def mse(ctx, network, sizes, replications, n_draws, burnin, thin, seed, out):
    """Posterior MSE of μ, v² and β over macro-replications."""
    _begin(ctx)
    graph, theta, _ = _load_network(network)
    theta = _require_theta(theta, network)
    sizes = _batch_sizes(sizes)
    frame = mse_study(graph, theta, sizes, replications, n_draws, burnin, thin, seed)
    atomic_write(out, frame.to_csv(index=False))
    click.echo(frame.to_markdown(index=False))
    _written(ctx, "mse", out)


@cli.command()
@click.option("--run", "run_id", type=int, default=None, help="Show the artifacts of one run.")
@click.option("--delete", "delete_id", type=int, default=None, help="Delete one run from the ledger.")
@click.pass_context
def history(ctx, run_id, delete_id):
    """List recorded runs."""
    registry = ctx.find_root().obj["history_registry"]
    registry.create_db_if_not_there()
    if delete_id is not None:
        deleted = registry.delete_run(delete_id)
        click.echo(f"deleted run {delete_id}" if deleted else f"no run {delete_id}")
        return
    if run_id is not None:
        run = registry.get_run(run_id)
        if run is None:
            raise click.UsageError(f"no run {run_id}")
        click.echo(json.dumps(run, indent=2, sort_keys=True))
        click.echo(render_artifacts(registry.get_artifacts_by_run(run_id)))
        return
    click.echo(render_runs(registry.get_all_runs()))


def _batch_sizes(text):
    try:
        sizes = [int(size) for size in text.split(",") if size.strip()]
    except ValueError as exc:
        raise InvalidArgument("sizes", f"not a list of integers: {text!r}") from exc
    if not sizes or min(sizes) < 2:
        raise InvalidArgument("sizes", f"need batch sizes of at least 2, got {text!r}")
    return sizes


def cli_run(argv=None):
    """
    Run the CLI and return its exit status instead of exiting.

    Library errors become one JSON line on stderr and status 1.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    state = {}
    try:
        with cli.make_context("bn-shapley", argv, obj=state) as ctx:
            cli.invoke(ctx)
        status = 0
    except click.exceptions.Exit as exc:
        status = exc.exit_code
    except click.ClickException as exc:
        exc.show()
        status = exc.exit_code
    except click.Abort:
        status = 1
    except BnShapleyError as exc:
        logging.error("%s: %s", exc.__class__.__name__, exc.message)
        click.echo(json.dumps(exc.to_dict(), sort_keys=True), err=True)
        status = 1
    except (OSError, ValueError) as exc:
        click.echo(json.dumps({"error": exc.__class__.__name__, "message": str(exc)}, sort_keys=True), err=True)
        status = 1

    registry = state.get("registry")
    if registry is not None:
        registry.finish_run(state.get("run_id"), status)
    return status
