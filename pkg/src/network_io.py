"""
File formats of the toolkit.

- Network documents (JSON): nodes with kinds and optional μ/v², edges with
  optional β, and named sub-graphs.
- Batch data (CSV): one column per node, empty cells mark unobserved nodes.
- Posterior draws: `#` header lines (format version, JSON metadata, network
  fingerprint, SHA-256 of the body) followed by a CSV body.
- Reports (JSON): SvReport, PosteriorSvSummary and MuReport records.
- DOT export of a report-annotated graph.

Every write goes to a temporary file in the target directory and is renamed
into place, so a failed run never leaves a partial artifact.

Dependencies:
- pandas (CSV parsing and writing)
- json, hashlib
"""

import hashlib
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .bn_model import NodeKind, Theta, build_graph
from .dataset import BatchDataset
from .exceptions import (
    ChecksumMismatch,
    FormatVersionError,
    HeaderMismatch,
    NonNumericCell,
    ParseError,
    ReportGraphMismatch,
)
from .inference import PosteriorDraws, coefficient_names
from .mu_sa import CoefficientKind, MuReport, PosteriorSvSummary
from .shapley import SvReport
from .utils import config


# === Helpers ===
def atomic_write(path, text):
    """Write `text` to `path` through a temporary sibling file and os.replace."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", newline="", dir=directory, prefix=f".{path.name}.", suffix=".tmp", delete=False
    )
    try:
        with handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(handle.name, path)
    except BaseException:
        if os.path.exists(handle.name):
            os.remove(handle.name)
        raise
    logging.debug("Wrote %s (%s bytes).", path, len(text))
    return path


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_sha256(path):
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()


def graph_fingerprint(graph):
    """Short digest of node names, kinds and edges."""
    structure = {
        "nodes": [[node.name, kind.value] for node, kind in zip(graph.nodes, graph.kinds)],
        "edges": [list(graph.edge_names(e)) for e in range(len(graph.edges))],
    }
    return sha256_text(json.dumps(structure, sort_keys=True, separators=(",", ":")))[:16]


def _check_version(record, where):
    version = record.get("format_version")
    if version != config.FORMAT_VERSION:
        raise FormatVersionError(f"{where}: unsupported format_version {version!r}")


def _dumps(record):
    return json.dumps(record, indent=2, sort_keys=True, allow_nan=False) + "\n"


# === Networks ===
class NetworkFile(NamedTuple):
    graph: object
    theta: object
    subgraphs: dict


def _read_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.colno, exc.msg) from exc


def parse_network(record):
    """Build a NetworkFile from an already-decoded network document."""
    _check_version(record, "network")
    try:
        nodes = record["nodes"]
        edges = record.get("edges", [])
        node_specs = [(row["name"], row["kind"]) for row in nodes]
        edge_specs = [(row["parent"], row["child"]) for row in edges]
    except (KeyError, TypeError) as exc:
        raise ParseError(0, 0, f"missing field {exc}") from exc

    graph = build_graph(node_specs, edge_specs)
    subgraphs = {name: [graph.node(k).name for k in members] for name, members in record.get("subgraphs", {}).items()}

    has_nodes = all("mu" in row and "v2" in row for row in nodes)
    has_edges = all("beta" in row for row in edges)
    theta = None
    if has_nodes and has_edges:
        theta = Theta.from_names(
            graph,
            {row["name"]: float(row["mu"]) for row in nodes},
            {row["name"]: float(row["v2"]) for row in nodes},
            {(row["parent"], row["child"]): float(row["beta"]) for row in edges},
        ).checked(graph)
    elif any("mu" in row or "v2" in row for row in nodes) or any("beta" in row for row in edges):
        logging.warning("Network declares only part of its coefficients; loading the structure alone.")
    return NetworkFile(graph, theta, subgraphs)


def load_network(path):
    """
    Load a network document.

    Returns:
        NetworkFile(graph, theta, subgraphs); theta is None unless every
        coefficient is declared.

    Raises:
        ParseError, FormatVersionError, and the graph/θ validation errors.
    """
    network = parse_network(_read_json(path))
    logging.info("Loaded network %s: %s nodes, %s edges.", path, len(network.graph), len(network.graph.edges))
    return network


def network_to_dict(graph, theta=None, subgraphs=None, labels=None):
    labels = labels or {}
    nodes = []
    for k, (node, kind) in enumerate(zip(graph.nodes, graph.kinds)):
        row = {"name": node.name, "kind": kind.value}
        if node.name in labels:
            row["label"] = labels[node.name]
        if theta is not None:
            row["mu"] = float(theta.mu[k])
            row["v2"] = float(theta.v2[k])
        nodes.append(row)
    edges = []
    for e, (parent, child) in enumerate(graph.edges):
        row = {"parent": graph.nodes[parent].name, "child": graph.nodes[child].name}
        if theta is not None:
            row["beta"] = float(theta.beta[(parent, child)])
        edges.append(row)
    record = {"format_version": config.FORMAT_VERSION, "nodes": nodes, "edges": edges}
    if subgraphs:
        record["subgraphs"] = {name: list(members) for name, members in subgraphs.items()}
    return record


def save_network(graph, theta, path, subgraphs=None, labels=None):
    """Write a network document; θ may be None for a structure-only file."""
    return atomic_write(path, _dumps(network_to_dict(graph, theta, subgraphs, labels)))


# === Batch data ===
def _parse_cell(raw, row, column):
    text = raw.strip()
    if not text:
        return math.nan
    try:
        value = float(text)
    except ValueError as exc:
        raise NonNumericCell(row, column, raw) from exc
    if not math.isfinite(value):
        raise NonNumericCell(row, column, raw)
    return value


def load_data(path, graph):
    """
    Load batch data from CSV.

    The header must name exactly the graph's nodes (any order). Rows with empty
    cells are incomplete batches whose scope is the set of filled columns.

    Raises:
        HeaderMismatch, NonNumericCell(row, col), ScopeNotParentClosed(row)
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    columns = [str(c).strip() for c in frame.columns]
    if sorted(columns) != sorted(graph.names) or len(set(columns)) != len(columns):
        missing = sorted(set(graph.names) - set(columns))
        extra = sorted(set(columns) - set(graph.names))
        raise HeaderMismatch(f"header does not match network nodes (missing {missing}, extra {extra})")
    frame.columns = columns
    values = np.empty((len(frame), len(graph)))
    for k, name in enumerate(graph.names):
        for row, raw in enumerate(frame[name].tolist()):
            values[row, k] = _parse_cell(raw, row + 1, name)
    dataset = BatchDataset(graph.names, values, ~np.isnan(values)).validate_scopes(graph, first_row=1)
    logging.info(
        "Loaded %s batches from %s (%s complete, %s incomplete).",
        dataset.n_rows, path, dataset.n_complete, dataset.n_incomplete,
    )
    return dataset


def data_to_csv(dataset):
    lines = [",".join(dataset.names)]
    for values, observed in zip(dataset.values, dataset.observed):
        lines.append(",".join(repr(float(v)) if seen else "" for v, seen in zip(values, observed)))
    return "\n".join(lines) + "\n"


def save_data(dataset, path):
    """Write batch data as CSV using shortest round-trip float text."""
    return atomic_write(path, data_to_csv(dataset))


# === Posterior draws ===
def save_draws(draws, graph, path):
    """Write posterior draws with a checksummed header."""
    names = coefficient_names(graph)
    body = io.StringIO()
    body.write(",".join(names) + "\n")
    for row in draws.matrix():
        body.write(",".join(repr(float(v)) for v in row) + "\n")
    body = body.getvalue()
    header = [
        f"# format_version: {config.FORMAT_VERSION}",
        f"# meta: {json.dumps(draws.meta, sort_keys=True)}",
        f"# network: {graph_fingerprint(graph)}",
        f"# sha256: {sha256_text(body)}",
    ]
    return atomic_write(path, "\n".join(header) + "\n" + body)


def load_draws(path, graph):
    """
    Read a draws file written by save_draws.

    Raises:
        FormatVersionError, ReportGraphMismatch, ChecksumMismatch, HeaderMismatch
    """
    text = Path(path).read_text(encoding="utf-8")
    header, body_lines = {}, []
    for line in text.splitlines(keepends=True):
        if line.startswith("#") and not body_lines:
            key, _, value = line[1:].strip().partition(":")
            header[key.strip()] = value.strip()
        else:
            body_lines.append(line)
    body = "".join(body_lines)

    try:
        version = int(header.get("format_version", "0"))
    except ValueError:
        version = None
    if version != config.FORMAT_VERSION:
        raise FormatVersionError(f"draws file: unsupported format_version {header.get('format_version')!r}")
    if header.get("network") != graph_fingerprint(graph):
        raise ReportGraphMismatch("draws file was written for a different network")
    if header.get("sha256") != sha256_text(body):
        raise ChecksumMismatch("draws file body does not match its checksum")

    frame = pd.read_csv(io.StringIO(body), float_precision="round_trip")
    if list(frame.columns) != coefficient_names(graph):
        raise HeaderMismatch("draws columns do not match the network's coefficients")
    meta = json.loads(header.get("meta", "{}"))
    return PosteriorDraws.from_matrix(graph, frame.to_numpy(dtype=float), meta)


# === Reports ===
_REPORT_KINDS = {
    "sv_report": SvReport,
    "posterior_sv_summary": PosteriorSvSummary,
    "mu_report": MuReport,
}


def save_report(report, graph, path):
    """Write an SvReport, PosteriorSvSummary or MuReport as JSON."""
    record = dict(report.to_dict())
    record["format_version"] = config.FORMAT_VERSION
    record["network"] = graph_fingerprint(graph)
    return atomic_write(path, _dumps(record))


def load_report(path, graph):
    record = _read_json(path)
    _check_version(record, "report")
    if record.get("network") != graph_fingerprint(graph):
        raise ReportGraphMismatch("report was written for a different network")
    try:
        kind = _REPORT_KINDS[record["kind"]]
    except KeyError as exc:
        raise ParseError(0, 0, f"unknown report kind {record.get('kind')!r}") from exc
    return kind.from_dict(graph, record)


# === DOT export ===
def _gray(ratio, darkest=48):
    ratio = min(max(ratio, 0.0), 1.0)
    level = int(round(255 - ratio * (255 - darkest)))
    return f"#{level:02X}{level:02X}{level:02X}"


def _node_criticality(graph, report):
    if report.output.name not in graph.names:
        raise ReportGraphMismatch(f"report output {report.output.name!r} is not in the network")
    criticality = np.zeros(len(graph))
    values = report.criticality if isinstance(report, SvReport) else report.p_mean
    for factor, value in zip(report.factors, values):
        if factor.node.name not in graph.names or graph.node(factor.node.name) != factor.node:
            raise ReportGraphMismatch(f"report factor {factor.label!r} is not in the network")
        k = factor.node.index
        criticality[k] = max(criticality[k], value)
    return criticality


def export_dot(graph, sv_report, mu_report=None, path=None):
    """
    Render the graph as DOT text, shaded by a criticality report.

    Node fill darkens with criticality (white at 0, darkest at the report's
    maximum). With a MuReport, edge colour and node outline darken with each
    β's and v²'s share of the posterior variance.

    Raises:
        ReportGraphMismatch
    """
    criticality = _node_criticality(graph, sv_report)
    top = criticality.max()
    outline = np.zeros(len(graph))
    edge_share = np.zeros(len(graph.edges))
    if mu_report is not None:
        if mu_report.output.name not in graph.names:
            raise ReportGraphMismatch(f"MU report output {mu_report.output.name!r} is not in the network")
        for coefficient, value in zip(mu_report.coefficients, np.maximum(mu_report.contributions, 0.0)):
            if coefficient.kind is CoefficientKind.BETA:
                if coefficient.index >= len(graph.edges) or "->".join(graph.edge_names(coefficient.index)) != coefficient.name:
                    raise ReportGraphMismatch(f"MU report coefficient {coefficient.label!r} is not in the network")
                edge_share[coefficient.index] = value
            elif coefficient.kind is CoefficientKind.V2:
                outline[graph.index(coefficient.name)] = value
        scale = max(outline.max(), edge_share.max())
        if scale > 0.0:
            outline, edge_share = outline / scale, edge_share / scale

    lines = [
        "digraph bn_shapley {",
        "  rankdir=LR;",
        '  node [shape=circle, style=filled, fontname="Helvetica"];',
    ]
    for k, (node, kind) in enumerate(zip(graph.nodes, graph.kinds)):
        ratio = criticality[k] / top if top > 0.0 else 0.0
        fill = _gray(ratio)
        font = "white" if ratio > 0.5 else "black"
        shape = "doublecircle" if kind is NodeKind.RESPONSE else "box" if kind is NodeKind.CPP else "circle"
        border = _gray(outline[k], darkest=0) if mu_report is not None else "#000000"
        width = 1.0 + 3.0 * outline[k]
        lines.append(
            f'  "{node.name}" [shape={shape}, fillcolor="{fill}", fontcolor="{font}", color="{border}", '
            f'penwidth={width:.2f}, tooltip="p={criticality[k]:.4f}"];'
        )
    for e, (parent, child) in enumerate(graph.edges):
        color = _gray(edge_share[e], darkest=0) if mu_report is not None else "#000000"
        width = 1.0 + 3.0 * edge_share[e]
        lines.append(f'  "{graph.nodes[parent].name}" -> "{graph.nodes[child].name}" [color="{color}", penwidth={width:.2f}];')
    lines.append("}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        atomic_write(path, text)
    return text

