"""
Batch data container.

A BatchDataset holds one row per production batch over the graph's nodes, in
node declaration order. Unobserved cells are NaN and `observed` marks the scope
of each row: complete rows observe every node, incomplete rows observe a
parent-closed top sub-graph.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd

from .exceptions import HeaderMismatch, ScopeNotParentClosed, SubgraphNotParentClosed


@dataclass(frozen=True, eq=False)
class BatchDataset:
    """
    Attributes:
        names (tuple[str]): Column names, equal to the graph's node names.
        values (np.ndarray): (R, n) measurements, NaN where unobserved.
        observed (np.ndarray): (R, n) boolean scope mask.
    """

    names: tuple
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, ndmin=2)
        if values.size == 0:
            values = values.reshape(0, len(self.names))
        observed = np.array(self.observed, dtype=bool).reshape(values.shape)
        values = np.where(observed, values, np.nan)
        values.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)

    @classmethod
    def complete(cls, names, values):
        values = np.asarray(values, dtype=float)
        return cls(names, values, np.ones(values.shape, dtype=bool))

    @classmethod
    def empty(cls, names):
        return cls(names, np.empty((0, len(names))), np.empty((0, len(names)), dtype=bool))

    @classmethod
    def from_frame(cls, graph, frame):
        """Build from a DataFrame whose columns are exactly the graph's node names."""
        columns = [str(c).strip() for c in frame.columns]
        if sorted(columns) != sorted(graph.names):
            missing = sorted(set(graph.names) - set(columns))
            extra = sorted(set(columns) - set(graph.names))
            raise HeaderMismatch(f"header does not match network nodes (missing {missing}, extra {extra})")
        frame = frame.set_axis(columns, axis=1)[list(graph.names)]
        values = frame.to_numpy(dtype=float)
        return cls(graph.names, values, ~np.isnan(values))

    def to_frame(self):
        return pd.DataFrame(np.asarray(self.values), columns=list(self.names))

    @property
    def n_rows(self):
        return self.values.shape[0]

    @cached_property
    def complete_mask(self):
        return self.observed.all(axis=1)

    @property
    def n_complete(self):
        """R1: rows observed on every node."""
        return int(self.complete_mask.sum())

    @property
    def n_incomplete(self):
        """R2: rows observed on a strict top sub-graph."""
        return self.n_rows - self.n_complete

    @cached_property
    def column_counts(self):
        return self.observed.sum(axis=0)

    def rows_observing(self, k):
        return np.flatnonzero(self.observed[:, k])

    def column_means(self):
        """Per-node mean over observed cells (NaN for never-observed nodes)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            totals = np.nansum(self.values, axis=0)
            return np.where(self.column_counts > 0, totals / np.maximum(self.column_counts, 1), np.nan)

    def column_variances(self):
        """Per-node sample variance over observed cells (NaN when fewer than 2)."""
        out = np.full(len(self.names), np.nan)
        for k in range(len(self.names)):
            column = self.values[self.observed[:, k], k]
            if column.size >= 2:
                out[k] = column.var(ddof=1)
        return out

    def validate_scopes(self, graph, first_row=0):
        """Raise ScopeNotParentClosed for the first row observing a node without its parents."""
        for row in range(self.n_rows):
            scope = np.flatnonzero(self.observed[row])
            missing = graph.missing_parents(scope.tolist())
            if missing:
                raise ScopeNotParentClosed(first_row + row, [graph.nodes[k].name for k in missing])
        return self

    def masked(self, graph, nodes):
        """Copy of the dataset observed only on the parent-closed node set `nodes`."""
        keep = {graph.index(k) for k in nodes}
        missing = graph.missing_parents(keep)
        if missing:
            raise SubgraphNotParentClosed([graph.nodes[k].name for k in missing])
        mask = np.zeros(len(self.names), dtype=bool)
        mask[sorted(keep)] = True
        return BatchDataset(self.names, self.values, self.observed & mask)

    def concat(self, other):
        if self.names != other.names:
            raise HeaderMismatch("datasets have different columns")
        return BatchDataset(
            self.names,
            np.vstack([self.values, other.values]),
            np.vstack([self.observed, other.observed]),
        )

    def rows(self, index):
        return BatchDataset(self.names, self.values[index], self.observed[index])

    def sample_covariance(self, nodes):
        """Sample covariance (ddof=1) of the node columns over rows observing all of them."""
        nodes = list(nodes)
        rows = self.observed[:, nodes].all(axis=1)
        block = self.values[np.ix_(rows, nodes)]
        if block.shape[0] < 2:
            return np.full((len(nodes), len(nodes)), np.nan), int(block.shape[0])
        return np.atleast_2d(np.cov(block, rowvar=False, ddof=1)), int(block.shape[0])
