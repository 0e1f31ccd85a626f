"""Command-line interface.

Subcommands: validate, evaluate, clca, decompose, recompose, generate,
simulate, ablate.  Exit codes: 0 success, 1 validation failure, 2
runtime/model failure.  Worker parallelism for studies comes from the
NESTSIM_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablate import run_ablation
from .clca import clca_apply
from .configio import build_dataset, design_from_config
from .dataset import load_dataset, load_flat, split_tables
from .decompose import DecomposedDataset, decompose, recompose
from .errors import (
    AlignmentError,
    DataValidationError,
    DesignError,
    MetricError,
    ModelFitError,
    NestsimError,
    SchemaError,
)
from .metrics.between import referential_integrity
from .report import (
    dumps_report,
    file_digest,
    report_to_rows,
    unified_report,
    write_report,
    write_rows_csv,
)
from .schema import MultilevelSchema, TableSpec, load_schema, save_schema
from .simulate import run_predictive_study, run_recovery_study

VALIDATION_ERRORS = (SchemaError, DataValidationError, DesignError)
RUNTIME_ERRORS = (ModelFitError, MetricError, AlignmentError)


def _pair(value: str) -> tuple[str, str]:
    parts = value.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected PARENT.csv,CHILD.csv")
    return parts[0], parts[1]


def _load_pair(pair, schema, mode="strict"):
    return load_dataset(pair[0], pair[1], schema, mode=mode)


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_validate(args) -> int:
    schema = load_schema(args.schema)
    if args.flat:
        flat = load_flat(args.flat, schema)
        split_tables(flat, schema)
        print(f"ok: flat table {args.flat} is consistent "
              f"({flat[schema.child.foreign_key].nunique()} clusters, {len(flat)} rows)")
        return 0
    mode = "audit" if args.audit else "strict"
    d = _load_pair(args.real, schema, mode=mode)
    print(f"ok: {d.n_clusters} clusters, {d.n_children} child rows")
    if args.audit:
        score = referential_integrity(d)
        print(f"referential integrity: {score.value:.6f} ({d.orphan_count} orphan rows)")
    return 0


def cmd_evaluate(args) -> int:
    schema = load_schema(args.schema)
    real = _load_pair(args.real, schema)
    synths = [
        _load_pair(pair, real.schema, mode="audit") for pair in args.synth
    ]
    inputs = {
        "schema": {"path": str(args.schema), "sha256": file_digest(args.schema)},
        "real": [{"path": p, "sha256": file_digest(p)} for p in args.real],
        "synth": [
            [{"path": p, "sha256": file_digest(p)} for p in pair] for pair in args.synth
        ],
    }
    doc = unified_report(
        real, synths, seed=args.seed, skip_efficacy=args.skip_efficacy,
        folds=args.folds, inputs=inputs,
    )
    if args.out:
        write_report(doc, args.out)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(dumps_report(doc))
    if args.csv:
        write_rows_csv(report_to_rows(doc), args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_clca(args) -> int:
    schema = load_schema(args.schema)
    real = _load_pair(args.real, schema)
    flat = load_flat(args.synth_flat, schema)
    repaired, audit = clca_apply(flat, real, schema, seed=args.seed, strategy=args.strategy)
    repaired.to_files(args.out_parent, args.out_child)
    audit_doc = {
        "seed": args.seed,
        "inputs": {
            "synth_flat": {"path": str(args.synth_flat), "sha256": file_digest(args.synth_flat)},
        },
        **audit,
    }
    if args.audit_out:
        write_report(audit_doc, args.audit_out)
    print(f"wrote {args.out_parent}, {args.out_child}")
    return 0


def cmd_decompose(args) -> int:
    schema = load_schema(args.schema)
    d = _load_pair(args.real, schema)
    columns = args.columns.split(",") if args.columns else None
    dd = decompose(d, columns)
    dd.data.to_files(args.out_parent, args.out_child)
    save_schema(dd.data.schema, args.out_schema)
    print(f"wrote {args.out_parent}, {args.out_child}, {args.out_schema} "
          f"(columns: {', '.join(dd.columns)})")
    return 0


def cmd_recompose(args) -> int:
    schema = load_schema(args.schema)
    d = _load_pair(args.real, schema)
    suffix = "__cmean"
    columns = tuple(
        c.name[: -len(suffix)] for c in d.schema.parent.columns if c.name.endswith(suffix)
    )
    if not columns:
        raise DataValidationError("no decomposed columns found (no *__cmean parent columns)")
    restored = recompose(DecomposedDataset(data=d, columns=columns))
    restored.to_files(args.out_parent, args.out_child)
    save_schema(restored.schema, args.out_schema)
    print(f"wrote {args.out_parent}, {args.out_child}, {args.out_schema}")
    return 0


def cmd_generate(args) -> int:
    cfg = _read_json(args.config)
    d = build_dataset(cfg, default_seed=args.seed, base_dir=Path(args.config).parent)
    d.to_files(args.out_parent, args.out_child)
    if args.out_schema:
        save_schema(d.schema, args.out_schema)
    print(f"wrote {args.out_parent}, {args.out_child} "
          f"({d.n_clusters} clusters, {d.n_children} rows)")
    return 0


def cmd_simulate(args) -> int:
    cfg = _read_json(args.config)
    design = design_from_config(cfg, base_dir=Path(args.config).parent,
                                seed_override=args.seed)
    if cfg.get("kind") == "predictive":
        result = run_predictive_study(design)
    else:
        result = run_recovery_study(design)
    doc = result.to_dict()
    doc["inputs"] = {"config": {"path": str(args.config), "sha256": file_digest(args.config)}}
    write_report(doc, args.out)
    print(f"wrote {args.out}")
    if args.log_out:
        result.log.to_csv(args.log_out, index=False)
        print(f"wrote {args.log_out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _read_json(args.config)
    doc = run_ablation(cfg, base_dir=Path(args.config).parent)
    doc["inputs"] = {"config": {"path": str(args.config), "sha256": file_digest(args.config)}}
    write_report(doc, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestsim",
        description="Evaluate, repair, and run simulation studies on synthetic multilevel data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a dataset or flat table against a schema")
    p.add_argument("--schema", required=True)
    p.add_argument("--real", type=_pair, help="PARENT.csv,CHILD.csv")
    p.add_argument("--flat", help="join-as-one CSV")
    p.add_argument("--audit", action="store_true", help="keep orphan rows and report integrity")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("evaluate", help="score synthetic data against real data")
    p.add_argument("--schema", required=True)
    p.add_argument("--real", type=_pair, required=True)
    p.add_argument("--synth", type=_pair, required=True, action="append",
                   help="repeatable for candidate averaging")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--skip-efficacy", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("clca", help="repair cluster-level inconsistencies in a flat table")
    p.add_argument("--schema", required=True)
    p.add_argument("--real", type=_pair, required=True)
    p.add_argument("--synth-flat", required=True)
    p.add_argument("--out-parent", required=True)
    p.add_argument("--out-child", required=True)
    p.add_argument("--audit-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", default="auto",
                   choices=["auto", "exhaustive", "local_search"])
    p.set_defaults(func=cmd_clca)

    p = sub.add_parser("decompose", help="replace child columns by within-cluster deviations")
    p.add_argument("--schema", required=True)
    p.add_argument("--real", type=_pair, required=True)
    p.add_argument("--columns", help="comma-separated; default all numeric child columns")
    p.add_argument("--out-parent", required=True)
    p.add_argument("--out-child", required=True)
    p.add_argument("--out-schema", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("recompose", help="restore original child columns from a decomposition")
    p.add_argument("--schema", required=True)
    p.add_argument("--real", type=_pair, required=True)
    p.add_argument("--out-parent", required=True)
    p.add_argument("--out-child", required=True)
    p.add_argument("--out-schema", required=True)
    p.set_defaults(func=cmd_recompose)

    p = sub.add_parser("generate", help="sample a dataset from a generator config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-parent", required=True)
    p.add_argument("--out-child", required=True)
    p.add_argument("--out-schema")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="run a predictive or recovery study")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config master seed")
    p.add_argument("--out", required=True)
    p.add_argument("--log-out", help="per-replication estimate log CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", help="run configuration variants and report deltas")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NestsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
