"""Exception hierarchy for nestsim.

Validation-type errors (bad schemas, malformed data files, inconsistent
flat tables) map to CLI exit code 1; runtime/model failures map to exit
code 2.
"""


class NestsimError(Exception):
    """Base class for all nestsim errors."""


class SchemaError(NestsimError):
    """Schema document is malformed or internally inconsistent."""


class DataValidationError(NestsimError):
    """A data file violates its schema (types, keys, missing values)."""


class ConsistencyError(DataValidationError):
    """A flat table has conflicting cluster-level values within a cluster."""

    def __init__(self, cluster, column, values=None):
        self.cluster = cluster
        self.column = column
        self.values = list(values) if values is not None else None
        detail = f" (values: {sorted(map(str, self.values))})" if self.values else ""
        super().__init__(
            f"cluster {cluster!r} has inconsistent values for "
            f"cluster-level column {column!r}{detail}"
        )


class MetricError(NestsimError):
    """A metric cannot be computed on the given samples."""


class ModelFitError(NestsimError):
    """A statistical model failed to fit."""


class DesignError(NestsimError):
    """A study design or generator spec is invalid."""


class AlignmentError(NestsimError):
    """Cluster-level consistency alignment failed."""
