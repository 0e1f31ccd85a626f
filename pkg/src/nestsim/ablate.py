"""Ablation runner: rerun the evaluation (and optionally a study) under
named configuration variants and report side-by-side deltas.

A variant is a set of dotted-path overrides applied to the base config,
e.g. ``{"synth.transform": "shuffle_clusters"}`` or
``{"synth.pool_fraction": 0.5}``.  Every numeric leaf of the variant
report is compared against the base report.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

from .configio import build_dataset, design_from_config
from .errors import DesignError
from .report import evaluate_pair, flatten_numeric
from .simulate import run_predictive_study, run_recovery_study


def apply_overrides(config: dict, overrides: dict) -> dict:
    out = copy.deepcopy(config)
    for path, value in overrides.items():
        node = out
        parts = path.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out


def _run_pipeline(config: dict, base_dir: Optional[Path] = None) -> dict:
    seed = int(config.get("seed", 0))
    real = build_dataset(config["real"], default_seed=seed, base_dir=base_dir)
    synth = build_dataset(config["synth"], default_seed=seed + 1, base_dir=base_dir)
    eval_cfg = config.get("evaluate", {})
    out = {
        "report": evaluate_pair(
            real,
            synth,
            seed=seed,
            skip_efficacy=bool(eval_cfg.get("skip_efficacy", False)),
            folds=int(eval_cfg.get("folds", 5)),
        )
    }
    study_cfg = config.get("study")
    if study_cfg:
        design = design_from_config(study_cfg, base_dir=base_dir)
        if study_cfg.get("kind") == "predictive":
            result = run_predictive_study(design)
        else:
            result = run_recovery_study(design)
        out["study"] = result.to_dict()
    return out


def run_ablation(config: dict, base_dir: Optional[Path] = None) -> dict:
    """Run the base pipeline and every variant; attach per-metric deltas."""
    variants = config.get("variants", {})
    if not isinstance(variants, dict):
        raise DesignError("'variants' must map names to override dicts")
    base_cfg = {k: v for k, v in config.items() if k != "variants"}
    base = _run_pipeline(base_cfg, base_dir=base_dir)
    base_flat = flatten_numeric(base)

    out = {"base": base, "variants": {}}
    for name in sorted(variants):
        variant_cfg = apply_overrides(base_cfg, variants[name])
        result = _run_pipeline(variant_cfg, base_dir=base_dir)
        flat = flatten_numeric(result)
        deltas = {
            path: flat[path] - base_flat[path]
            for path in sorted(set(flat) & set(base_flat))
        }
        out["variants"][name] = {
            "overrides": variants[name],
            "result": result,
            "deltas": deltas,
        }
    return out
