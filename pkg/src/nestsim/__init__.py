"""nestsim: quality evaluation, repair, and simulation studies for
synthetic two-level (parent/child) tabular data."""

__version__ = "0.1.0"

from .dataset import MultilevelDataset, join_as_one, load_dataset, load_flat, split_tables
from .decompose import ClusterMeanDecomposer, DecomposedDataset, decompose, recompose
from .schema import ColumnSpec, MultilevelSchema, TableSpec, load_schema, save_schema
from .varcomp import VarianceComponents, estimate_variance_components

__all__ = [
    "ClusterMeanDecomposer",
    "ColumnSpec",
    "DecomposedDataset",
    "MultilevelDataset",
    "MultilevelSchema",
    "TableSpec",
    "VarianceComponents",
    "decompose",
    "estimate_variance_components",
    "join_as_one",
    "load_dataset",
    "load_flat",
    "load_schema",
    "recompose",
    "save_schema",
    "split_tables",
]
