"""
Error types raised by the bn-shapley library.

Every error derives from BnShapleyError and carries its structured fields, so
the CLI can print a machine-readable record with `to_dict()`.
"""


class BnShapleyError(Exception):
    """Base class for all library errors."""

    def __init__(self, message="", **fields):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.fields = fields

    def to_dict(self):
        """Return a JSON-serializable description of the error."""
        record = {"error": self.__class__.__name__, "message": self.message}
        for key, value in self.fields.items():
            record[key] = value if isinstance(value, (int, float, str, bool)) else repr(value)
        return record


# === Graph errors ===
class GraphError(BnShapleyError):
    pass


class CycleDetected(GraphError):
    def __init__(self, edges):
        super().__init__(f"edge set contains a cycle through {list(edges)}", edges=list(edges))
        self.edges = list(edges)


class EdgeIntoCpp(GraphError):
    def __init__(self, edge):
        super().__init__(f"edge {edge[0]}->{edge[1]} points into a CPP node", edge=f"{edge[0]}->{edge[1]}")
        self.edge = tuple(edge)


class DuplicateName(GraphError):
    def __init__(self, name):
        super().__init__(f"node name {name!r} declared twice", name=name)
        self.name = name


class UnknownName(GraphError):
    def __init__(self, name):
        super().__init__(f"unknown node name {name!r}", name=name)
        self.name = name


class TargetIsCpp(GraphError):
    def __init__(self, name):
        super().__init__(f"node {name!r} is a CPP and cannot be an analysis target", node=name)
        self.node = name


class InvalidTheta(BnShapleyError):
    def __init__(self, issues):
        super().__init__("; ".join(str(issue) for issue in issues), count=len(issues))
        self.issues = list(issues)


# === Sensitivity errors ===
class UnknownFactor(BnShapleyError):
    def __init__(self, factor):
        super().__init__(f"unknown input factor {factor}", factor=str(factor))
        self.factor = factor


class TooManyFactors(BnShapleyError):
    def __init__(self, count, limit):
        super().__init__(f"{count} factors exceed the enumeration limit of {limit}", count=count, limit=limit)
        self.count = count


class OutputNotInSubgraph(BnShapleyError):
    def __init__(self, name):
        super().__init__(f"output {name!r} is not part of the subgraph", node=name)


class NotPositiveSemidefinite(BnShapleyError):
    def __init__(self, smallest):
        super().__init__(f"input covariance is not PSD (smallest eigenvalue {smallest:.3g})", smallest=smallest)


# === Inference errors ===
class ChildUnobservedInAllRows(BnShapleyError):
    def __init__(self, name):
        super().__init__(f"node {name!r} is unobserved in every row", node=name)


class InvalidArgument(BnShapleyError):
    def __init__(self, name, message):
        super().__init__(f"{name}: {message}", argument=name)
        self.argument = name


class EmptyDataset(BnShapleyError):
    pass


class InvalidChainParams(BnShapleyError):
    pass


class TooFewDraws(BnShapleyError):
    def __init__(self, count):
        super().__init__(f"at least 2 draws are needed, got {count}", count=count)


class NoPathToOutput(BnShapleyError):
    pass


class ZeroTotalVariance(BnShapleyError):
    pass


# === Simulation errors ===
class InvalidRange(BnShapleyError):
    def __init__(self, name, low, up):
        super().__init__(f"range for {name!r} must satisfy low < up, got {low}..{up}", node=name)


class InfeasibleTarget(BnShapleyError):
    def __init__(self, name, excess):
        super().__init__(
            f"propagated variance at {name!r} exceeds its target by {excess:.6g}", node=name, excess=excess
        )
        self.node = name
        self.excess = excess


class SubgraphNotParentClosed(BnShapleyError):
    def __init__(self, missing):
        super().__init__(f"subgraph is not closed under parents, missing {sorted(missing)}", missing=sorted(missing))


# === I/O errors ===
class ParseError(BnShapleyError):
    def __init__(self, line, col, message):
        super().__init__(f"line {line}, column {col}: {message}", line=line, col=col)
        self.line = line
        self.col = col


class HeaderMismatch(BnShapleyError):
    pass


class NonNumericCell(BnShapleyError):
    def __init__(self, row, col, value):
        super().__init__(f"row {row}, column {col!r}: {value!r} is not numeric", row=row, col=col)
        self.row = row
        self.col = col


class ScopeNotParentClosed(BnShapleyError):
    def __init__(self, row, missing):
        super().__init__(f"row {row} observes a node without its parents {sorted(missing)}", row=row)
        self.row = row


class ReportGraphMismatch(BnShapleyError):
    pass


class ChecksumMismatch(BnShapleyError):
    pass


class FormatVersionError(BnShapleyError):
    pass
