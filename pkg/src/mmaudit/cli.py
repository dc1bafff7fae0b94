"""Command line entry point: ``audit run | bench | explain``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import AuditConfig, load_config
from .discovery import rank_slices, slice_error_rates
from .evaluation import bootstrap_audit, discover, emit_report, explain_slice
from .explain import ExplainError, global_baseline, load_token_table
from .fusion import embed
from .ingest import STOPWORDS, build_docs, load_dataset

log = logging.getLogger("mmaudit")


def _config(args) -> AuditConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, base_seed=args.seed)
    return cfg


def _token_table(cfg: AuditConfig):
    return load_token_table(cfg.token_table) if cfg.token_table else None


def cmd_run(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.manifest)
    modalities = [m for m in cfg.modalities if m in ds.views] or list(ds.views)
    if modalities != list(cfg.modalities):
        log.warning("using modalities %s (config asked for %s)", modalities, list(cfg.modalities))
    u, pca = embed(ds, modalities, cfg.pca_components, cfg.standardize)
    model, assignment = discover(u, ds.labels, ds.predictions, cfg, cfg.base_seed)
    order = rank_slices(model, assignment, ds.labels, ds.predictions)
    rates = slice_error_rates(assignment, ds.labels, ds.predictions)
    table = _token_table(cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    explanations = []
    for j in order:
        ids = assignment.slice_ids(j, ds.ids)
        entry = {
            "slice_id": j,
            "size": len(ids),
            "error_rate": None if np.isnan(rates[j]) else float(rates[j]),
            "ids": ids,
        }
        if ids:
            try:
                entry["explanation"] = explain_slice(ds, ids, cfg, j, table).to_dict()
            except ExplainError as exc:
                entry["explanation"] = None
                entry["note"] = str(exc)
        explanations.append(entry)
    result = {"ranking": order, "slices": explanations, "model": model.to_dict()}
    try:
        docs = build_docs(ds, cfg.doc_source, STOPWORDS | set(cfg.stopwords))
        result["baseline"] = global_baseline(ds, docs, cfg.top_n).to_dict()
    except ExplainError as exc:
        result["baseline"] = None
        log.warning("baseline skipped: %s", exc)
    (out / "slices.json").write_text(json.dumps(result, indent=2))
    with open(out / "memberships.csv", "w") as fh:
        fh.write("id," + ",".join(f"slice{j}" for j in range(model.K)) + "\n")
        for sid, row in zip(ds.ids, assignment.memberships):
            fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    print(f"{len(order)} slices written to {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    report = bootstrap_audit(cfg)
    emit_report(report, args.out)
    print(
        f"valid {report.n_valid}/{report.n_valid + report.n_invalid}  "
        f"mean P@{cfg.precision_k} {report.mean_precision_at_k:.3f}  "
        f"baseline {report.mean_baseline_precision:.3f}"
    )
    return 0


def _read_slice_file(path: Path) -> tuple[int, list[str]]:
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return -1, [line.strip() for line in text.splitlines() if line.strip()]
    if isinstance(data, list):
        return -1, [str(x) for x in data]
    return int(data.get("slice_id", -1)), [str(x) for x in data["ids"]]


def cmd_explain(args) -> int:
    cfg = _config(args)
    ds = load_dataset(args.manifest)
    slice_id, ids = _read_slice_file(Path(args.slice_file))
    report = explain_slice(ds, ids, cfg, slice_id, _token_table(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    for e in report.entries:
        r = "" if e.r_attr is None else f"  r_attr={e.r_attr:+.4f}"
        print(f"{e.token:20s} ds={e.ds:+.4f}{r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="audit", description="Multimodal error-slice auditing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="discover and explain slices on a real dataset")
    run.add_argument("--manifest", required=True)
    run.add_argument("--config")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="synthetic bootstrap benchmark")
    bench.add_argument("--config")
    bench.add_argument("--out", required=True)
    bench.add_argument("--seed", type=int)
    bench.set_defaults(func=cmd_bench)

    ex = sub.add_parser("explain", help="explain a given slice")
    ex.add_argument("--manifest", required=True)
    ex.add_argument("--slice-file", required=True)
    ex.add_argument("--config")
    ex.add_argument("--out", required=True)
    ex.add_argument("--seed", type=int)
    ex.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
