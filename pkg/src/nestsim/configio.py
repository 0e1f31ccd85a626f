"""Interpretation of JSON config documents for the CLI and ablation runner.

Dataset sources come in three forms::

    {"hierarchical": {...generator spec...}, "seed": 1}
    {"huang": {...spec...}, "n_clusters": 50, "seed": 2}
    {"files": {"schema": "s.json", "parent": "p.csv", "child": "c.csv"}}

with optional post-steps ``"transform": "shuffle_clusters"`` and
``"pool_fraction": 0.5`` (keep a without-replacement subsample of the
clusters).  Study designs mirror the dataclasses in
:mod:`nestsim.simulate`.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

from .dataset import MultilevelDataset, load_dataset
from .errors import DesignError
from .generators import (
    cluster_bootstrap,
    generate_hierarchical,
    generate_huang,
    hierarchical_spec_from_dict,
    huang_spec_from_dict,
    OutcomeModelSpec,
    shuffle_cluster_labels,
)
from .schema import load_schema
from .seeding import derive_seed
from .simulate import (
    GeneratorSource,
    PoolSource,
    PredictiveDesign,
    RecoveryDesign,
)


def build_dataset(cfg: dict, default_seed: int = 0, base_dir: Optional[Path] = None) -> MultilevelDataset:
    cfg = dict(cfg)
    seed = int(cfg.get("seed", default_seed))
    if "hierarchical" in cfg:
        d = generate_hierarchical(hierarchical_spec_from_dict(cfg["hierarchical"]), seed)
    elif "huang" in cfg:
        spec_doc = dict(cfg["huang"])
        j = int(spec_doc.pop("n_clusters", cfg.get("n_clusters", 0)) or cfg.get("n_clusters", 0))
        if j < 2:
            raise DesignError("huang source needs n_clusters >= 2")
        d = generate_huang(huang_spec_from_dict(spec_doc), j, seed)
    elif "files" in cfg:
        files = cfg["files"]
        base = base_dir or Path(".")
        schema = load_schema(base / files["schema"])
        d = load_dataset(base / files["parent"], base / files["child"], schema,
                         mode=files.get("mode", "strict"))
    else:
        raise DesignError("dataset config needs 'hierarchical', 'huang', or 'files'")

    fraction = cfg.get("pool_fraction")
    if fraction:
        j_out = max(1, int(math.floor(d.n_clusters * float(fraction))))
        d = cluster_bootstrap(d, j_out, derive_seed(seed, 0, 0, "pool-fraction"))
    transform = cfg.get("transform")
    if transform == "shuffle_clusters":
        d = shuffle_cluster_labels(d, derive_seed(seed, 0, 0, "shuffle"))
    elif transform:
        raise DesignError(f"unknown transform {transform!r}")
    return d


def source_from_config(cfg: dict, base_dir: Optional[Path] = None):
    if "hierarchical" in cfg:
        return GeneratorSource("hierarchical", hierarchical_spec_from_dict(cfg["hierarchical"]))
    if "huang" in cfg:
        return GeneratorSource("huang", huang_spec_from_dict(cfg["huang"]))
    if "pool" in cfg:
        pool = build_dataset(cfg["pool"], base_dir=base_dir)
        return PoolSource(pool, replace=bool(cfg.get("replace", False)))
    raise DesignError("source config needs 'hierarchical', 'huang', or 'pool'")


def design_from_config(cfg: dict, base_dir: Optional[Path] = None,
                       seed_override: Optional[int] = None):
    kind = cfg.get("kind")
    source = source_from_config(cfg["source"], base_dir=base_dir)
    seed = int(seed_override if seed_override is not None else cfg.get("master_seed", 0))
    if kind == "predictive":
        return PredictiveDesign(
            source=source,
            outcome=cfg["outcome"],
            predictors=tuple(cfg["predictors"]),
            conditions=tuple(cfg.get("conditions", (10, 25, 50, 100, 300))),
            replications=int(cfg.get("replications", 500)),
            master_seed=seed,
            slope_column=cfg.get("slope_column"),
            interactions=tuple(tuple(p) for p in cfg.get("interactions", [])),
            methods=tuple(cfg.get("methods", ("ols_fe", "prior", "multilevel"))),
        )
    if kind == "recovery":
        return RecoveryDesign(
            source=source,
            truth=OutcomeModelSpec.from_dict(cfg["truth"]),
            omitted=tuple(cfg.get("omitted", [])),
            tracked=tuple(cfg.get("tracked", [])),
            conditions=tuple(cfg.get("conditions", (10, 30, 50, 100))),
            replications=int(cfg.get("replications", 500)),
            master_seed=seed,
            models=tuple(cfg.get("models", ("ols", "ols_igm", "hlm", "hlm_igm", "oracle"))),
        )
    raise DesignError(f"study kind must be 'predictive' or 'recovery', got {kind!r}")
