"""Precision@k scoring, the bootstrap benchmark protocol and report files."""
from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import biaslab
from .config import AuditConfig
from .discovery import DiscoveryError, SliceAssignment, assign_slices, fit_error_only, fit_slice_model, rank_slices
from .explain import (
    TokenReport,
    attach_r_attr,
    build_reference_slice,
    distinctiveness,
    fit_tfidf,
    global_attr_precision,
    global_baseline,
)
from .fusion import embed
from .ingest import STOPWORDS, build_docs


class AuditError(RuntimeError):
    pass


def precision_at_k(memberships, truth, k: int = 10) -> float:
    """Share of planted samples among the k highest-membership samples (ties: lower index)."""
    m = np.asarray(memberships, dtype=np.float64)
    truth = np.asarray(truth)
    if k > len(m):
        raise ValueError(f"k={k} exceeds N={len(m)}")
    top = np.argsort(-m, kind="stable")[:k]
    return float(truth[top].sum() / k)


def best_slice(model, assignment: SliceAssignment, truth, k: int = 10) -> tuple[int, float]:
    """Slice with the highest Precision@k. Slices with no membership mass only win if all are empty.

    Samples are ranked by membership log-odds when the assignment carries
    them (same order as the probabilities, without saturation at 1.0).
    """
    mem = assignment.memberships
    rank_by = mem if assignment.log_odds is None else assignment.log_odds
    scores = [precision_at_k(rank_by[:, j], truth, k) for j in range(mem.shape[1])]
    live = [j for j in range(mem.shape[1]) if mem[:, j].max() > 0] or list(range(mem.shape[1]))
    j = max(live, key=lambda j: (scores[j], -j))
    return j, scores[j]


@dataclass
class IterationResult:
    seed: int
    valid: bool
    reason: str | None = None
    accuracy_gap: float | None = None
    realized_strength: float | None = None
    best_slice: int | None = None
    best_slice_precision_at_k: float | None = None
    top_ranked_slice: int | None = None
    top_ranked_precision_at_k: float | None = None
    baseline_precision: float | None = None
    baseline_tokens: list | None = None
    token_report: dict | None = None
    em_iterations: int | None = None
    em_max_decrease: float | None = None


@dataclass
class AuditReport:
    per_iteration: list[IterationResult]
    mean_precision_at_k: float
    mean_baseline_precision: float
    n_valid: int
    n_invalid: int
    token_frequency: dict[str, int]
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AuditReport":
        d = dict(d)
        d["per_iteration"] = [IterationResult(**r) for r in d["per_iteration"]]
        return cls(**d)

    def token_reports(self) -> list[TokenReport]:
        return [TokenReport.from_dict(r.token_report) for r in self.per_iteration if r.token_report]


def explain_slice(dataset, err_ids, cfg: AuditConfig, slice_id: int = -1, token_table=None) -> TokenReport:
    """Reference slice, TF-IDF distinctiveness and (if a token table is given) r_attr."""
    err_ids = list(err_ids)
    ref_ids = build_reference_slice(dataset, err_ids)
    docs = build_docs(dataset, cfg.doc_source, STOPWORDS | set(cfg.stopwords))
    report = distinctiveness(fit_tfidf(docs), err_ids, ref_ids, cfg.top_n, slice_id=slice_id)
    if token_table:
        img = dataset.views[cfg.image_modality]
        img_vecs = {sid: img[i] for i, sid in enumerate(dataset.ids)}
        report = attach_r_attr(report, token_table, img_vecs, err_ids, ref_ids)
    return report


def discover(u, y, yhat, cfg: AuditConfig, seed: int):
    if cfg.mode == "error_only":
        model = fit_error_only(u, y, yhat, cfg.k_slices, seed, cfg.fit_options)
    else:
        model = fit_slice_model(u, y, yhat, cfg.k_slices, cfg.gamma, seed, cfg.fit_options)
    return model, assign_slices(model, u, y, yhat, cfg.beta)


def run_iteration(cfg: AuditConfig, seed: int) -> IterationResult:
    bias = cfg.bias
    train, test = biaslab.synth_world(cfg.world, bias, seed)
    gap = biaslab.accuracy_gap(test, bias.attr)
    res = IterationResult(seed=seed, valid=False, accuracy_gap=gap)
    res.realized_strength = biaslab.realized_strength(train, bias)
    if not biaslab.validity_check(test, bias.attr):
        res.reason = "accuracy gap below 0.10"
        return res

    u, _ = embed(test, cfg.modalities, cfg.pca_components, cfg.standardize)
    y, yhat = test.labels, test.predictions
    try:
        model, assignment = discover(u, y, yhat, cfg, seed)
    except DiscoveryError as exc:
        res.reason = str(exc)
        return res

    trace = np.asarray(model.log_likelihood_trace)
    res.em_iterations = len(trace)
    res.em_max_decrease = float(max(0.0, -np.diff(trace).min())) if len(trace) > 1 else 0.0

    truth = biaslab.planted_mask(test, bias)
    j, prec = best_slice(model, assignment, truth, cfg.precision_k)
    top = rank_slices(model, assignment, y, yhat)[0]
    res.valid = True
    res.best_slice, res.best_slice_precision_at_k = j, prec
    res.top_ranked_slice = top
    rank_by = assignment.log_odds if assignment.log_odds is not None else assignment.memberships
    res.top_ranked_precision_at_k = precision_at_k(rank_by[:, top], truth, cfg.precision_k)
    res.baseline_precision = global_attr_precision(test, bias.attr)

    members = assignment.slices[j]
    if len(members) == 0:
        members = np.argsort(-rank_by[:, j], kind="stable")[: cfg.precision_k]
    err_ids = [test.ids[i] for i in members]
    table = biaslab.token_table(cfg.world, seed, cfg.image_modality)
    try:
        res.token_report = explain_slice(test, err_ids, cfg, j, table).to_dict()
    except ValueError as exc:
        res.reason = f"no explanation: {exc}"
    docs = build_docs(test, cfg.doc_source, STOPWORDS | set(cfg.stopwords))
    res.baseline_tokens = global_baseline(test, docs, cfg.top_n).tokens
    return res


def aggregate(results: list[IterationResult], cfg: AuditConfig) -> AuditReport:
    results = sorted(results, key=lambda r: r.seed)
    valid = [r for r in results if r.valid]
    if not valid:
        reasons = Counter(r.reason for r in results)
        raise AuditError(f"no valid iterations out of {len(results)}: {dict(reasons)}")
    freq = Counter()
    for r in valid:
        if r.token_report:
            freq.update(t["token"] for t in r.token_report["tokens"])
    return AuditReport(
        per_iteration=results,
        mean_precision_at_k=float(np.mean([r.best_slice_precision_at_k for r in valid])),
        mean_baseline_precision=float(np.mean([r.baseline_precision for r in valid])),
        n_valid=len(valid),
        n_invalid=len(results) - len(valid),
        token_frequency=dict(sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))),
        config_echo=cfg.to_dict(),
    )


def bootstrap_audit(cfg: AuditConfig) -> AuditReport:
    """Run ``cfg.iterations`` independent synthetic audits with seeds base_seed + t."""
    seeds = [cfg.base_seed + t for t in range(cfg.iterations)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run_iteration, [cfg] * len(seeds), seeds))
    else:
        results = [run_iteration(cfg, s) for s in seeds]
    return aggregate(results, cfg)


def report_json(report: AuditReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)


def token_stats(report: AuditReport) -> list[tuple[str, int, float, float | None]]:
    ds, ra = defaultdict(list), defaultdict(list)
    for tr in report.token_reports():
        for e in tr.entries:
            ds[e.token].append(e.ds)
            if e.r_attr is not None:
                ra[e.token].append(e.r_attr)
    rows = []
    for tok, n in report.token_frequency.items():
        rows.append((tok, n, float(np.mean(ds[tok])), float(np.mean(ra[tok])) if ra[tok] else None))
    return rows


def emit_report(report: AuditReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "summary.csv", out / "tokens.csv"]
    paths[0].write_text(report_json(report))
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "valid", "precision", "baseline_precision"])
        for r in report.per_iteration:
            w.writerow([r.seed, int(r.valid), _fmt(r.best_slice_precision_at_k), _fmt(r.baseline_precision)])
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["token", "frequency", "mean_ds", "mean_r_attr"])
        for tok, n, ds, ra in token_stats(report):
            w.writerow([tok, n, repr(ds), _fmt(ra)])
    return paths


def _fmt(x):
    return "" if x is None else repr(x)
