"""Unified quality report: assembly, candidate averaging, serialization.

A report bundles the within-table sections for both tables, the
between-table section, the ML-efficacy section, and the generalization
check, plus section averages.  Multiple synthetic candidates can be
scored against one real dataset; their reports are averaged leaf by
leaf (interpretation bands recomputed from the averaged values).
Serialization is deterministic: sorted keys, no timestamps, inputs
identified by content digest.
"""

from __future__ import annotations

import hashlib
import json
from typing import Optional, Sequence

import numpy as np

from . import __version__ as _version
from .dataset import MultilevelDataset, join_as_one
from .metrics.between import between_table_report, generalization_score
from .metrics.efficacy import efficacy_report
from .metrics.scores import categorize, OVERFIT_THRESHOLD
from .metrics.within import within_table_report

REPORT_VERSION = 1


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def evaluate_pair(
    real: MultilevelDataset,
    synth: MultilevelDataset,
    seed: int = 0,
    skip_efficacy: bool = False,
    folds: int = 5,
) -> dict:
    """Full metric tree for one real/synthetic pair."""
    child_cols = [real.schema.child.primary_key, real.schema.child.foreign_key]
    within_child = within_table_report(
        real.child.drop(columns=child_cols),
        synth.child.drop(columns=child_cols),
        real.schema.child,
    )
    within_parent = within_table_report(
        real.parent.drop(columns=[real.schema.parent.primary_key]),
        synth.parent.drop(columns=[synth.schema.parent.primary_key]),
        real.schema.parent,
    )
    between = between_table_report(real, synth)
    doc = {
        "within": {"child": within_child.to_dict(), "parent": within_parent.to_dict()},
        "between": between.to_dict(),
        "generalization": generalization_score(real, synth).to_dict(),
    }
    if not skip_efficacy:
        doc["efficacy"] = efficacy_report(real, synth, seed=seed, folds=folds).to_dict()
    sections = {
        "within_child_avg": doc["within"]["child"]["table_avg"],
        "within_parent_avg": doc["within"]["parent"]["table_avg"],
        "between_avg": doc["between"]["between_avg"],
    }
    if not skip_efficacy:
        sections["efficacy_avg"] = doc["efficacy"]["overall_avg"]
    present = [v for v in sections.values() if v is not None]
    sections["grand_avg"] = float(np.mean(present)) if present else None
    doc["overall"] = sections
    return doc


def _average_nodes(nodes: list):
    first = nodes[0]
    if isinstance(first, dict):
        out = {}
        for key in first:
            out[key] = _average_nodes([n[key] for n in nodes])
        if "value" in out and isinstance(out.get("value"), float):
            out["category"] = categorize(out["value"])
            out["overfit_flag"] = out["value"] >= OVERFIT_THRESHOLD
        return out
    if isinstance(first, list):
        return [_average_nodes([n[i] for n in nodes]) for i in range(len(first))]
    if isinstance(first, bool) or isinstance(first, str) or first is None or isinstance(first, int):
        if all(isinstance(n, (int, float)) and not isinstance(n, bool) for n in nodes):
            return float(np.mean(nodes))
        vals = [n for n in nodes if n is not None]
        if vals and all(isinstance(n, (int, float)) and not isinstance(n, bool) for n in vals):
            return float(np.mean(vals))
        return first
    if isinstance(first, float):
        vals = [n for n in nodes if n is not None]
        return float(np.mean(vals)) if vals else None
    return first


def unified_report(
    real: MultilevelDataset,
    synths: Sequence[MultilevelDataset],
    seed: int = 0,
    skip_efficacy: bool = False,
    folds: int = 5,
    inputs: Optional[dict] = None,
) -> dict:
    """Average the per-candidate metric trees and attach provenance."""
    if not synths:
        raise ValueError("need at least one synthetic dataset")
    candidates = [
        evaluate_pair(real, s, seed=seed, skip_efficacy=skip_efficacy, folds=folds)
        for s in synths
    ]
    body = _average_nodes(candidates) if len(candidates) > 1 else candidates[0]
    return {
        "report_version": REPORT_VERSION,
        "tool": {"name": "nestsim", "version": _version},
        "seed": seed,
        "n_candidates": len(candidates),
        "inputs": inputs or {},
        **body,
    }


def report_to_rows(doc: dict) -> list[dict]:
    """Flatten a report into (section, metric, name, value, category) rows."""
    rows = []

    def emit(section, node):
        if isinstance(node, dict):
            if "value" in node and "name" in node:
                rows.append({
                    "section": section,
                    "name": node["name"],
                    "value": node["value"],
                    "category": node.get("category", ""),
                })
                return
            if "value" in node and "target" in node:
                rows.append({
                    "section": section,
                    "name": f"efficacy:{node['level']}:{node['target']}",
                    "value": node["value"],
                    "category": "" if node["value"] is None else categorize(node["value"]),
                })
                return
            for key, sub in node.items():
                emit(f"{section}.{key}" if section else key, sub)
        elif isinstance(node, list):
            for sub in node:
                emit(section, sub)

    for key in ("within", "between", "efficacy", "generalization"):
        if key in doc:
            emit(key, doc[key])
    for key, val in doc.get("overall", {}).items():
        rows.append({"section": "overall", "name": key, "value": val, "category": ""})
    return rows


def flatten_numeric(doc, prefix: str = "") -> dict:
    """Numeric leaves of a report keyed by path (names used for list items)."""
    out = {}
    if isinstance(doc, dict):
        label = doc.get("name") or doc.get("target")
        for key, val in doc.items():
            if key in ("name", "target"):
                continue
            path = f"{prefix}.{key}" if prefix else key
            if label:
                path = f"{prefix}[{label}].{key}"
            out.update(flatten_numeric(val, path))
        return out
    if isinstance(doc, list):
        for item in doc:
            out.update(flatten_numeric(item, prefix))
        return out
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        out[prefix] = float(doc)
    return out


def dumps_report(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(doc))


def write_rows_csv(rows: list[dict], path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["section", "name", "value", "category"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
