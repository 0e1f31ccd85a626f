import numpy as np
import pandas as pd
import pytest

from nestsim.schema import ColumnSpec, MultilevelSchema, TableSpec


@pytest.fixture
def school_schema() -> MultilevelSchema:
    return MultilevelSchema(
        parent=TableSpec(
            name="school",
            primary_key="SCH_ID",
            columns=(
                ColumnSpec("SCH_CLIMATE", "numeric"),
                ColumnSpec("SCH_LOCALE", "categorical"),
            ),
        ),
        child=TableSpec(
            name="student",
            primary_key="STU_ID",
            foreign_key="SCH_ID",
            columns=(
                ColumnSpec("STU_SCORE", "numeric"),
                ColumnSpec("STU_SES", "numeric"),
                ColumnSpec("STU_EXPECT", "categorical"),
            ),
        ),
    )


@pytest.fixture
def school_frames():
    parent = pd.DataFrame(
        {
            "SCH_ID": ["S1", "S2"],
            "SCH_CLIMATE": [0.5, -0.25],
            "SCH_LOCALE": ["city", "rural"],
        }
    )
    child = pd.DataFrame(
        {
            "STU_ID": ["A1", "A2", "A3", "A4"],
            "SCH_ID": ["S1", "S1", "S2", "S2"],
            "STU_SCORE": [1.0, 2.0, 3.0, 4.0],
            "STU_SES": [0.1, -0.1, 0.2, -0.2],
            "STU_EXPECT": ["hi", "lo", "hi", "hi"],
        }
    )
    return parent, child


@pytest.fixture
def school_files(tmp_path, school_frames, school_schema):
    parent, child = school_frames
    ppath = tmp_path / "school.csv"
    cpath = tmp_path / "student.csv"
    parent.to_csv(ppath, index=False)
    child.to_csv(cpath, index=False)
    return ppath, cpath


def balanced_clusters(j: int, n: int, tau2: float, sigma2: float, seed: int):
    """(values, cluster labels) from a one-way random-effects draw."""
    rng = np.random.default_rng(seed)
    u = rng.normal(0.0, np.sqrt(tau2), j)
    values = (u[:, None] + rng.normal(0.0, np.sqrt(sigma2), (j, n))).ravel()
    clusters = np.repeat([f"c{i:04d}" for i in range(j)], n)
    return values, clusters
