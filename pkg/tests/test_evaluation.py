import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmaudit.config import AuditConfig, fixture_config, load_config
from mmaudit.discovery import SliceAssignment, assign_slices, fit_slice_model
from mmaudit.evaluation import (
    AuditError,
    AuditReport,
    IterationResult,
    aggregate,
    best_slice,
    bootstrap_audit,
    emit_report,
    precision_at_k,
    report_json,
)


def test_precision_at_k_example():
    m = np.linspace(1.0, 0.0, 20)
    truth = np.zeros(20, int)
    truth[[0, 2, 4, 5, 9, 12]] = 1
    assert precision_at_k(m, truth, 10) == pytest.approx(0.5)
    truth[[1]] = 1
    assert precision_at_k(m, truth, 10) == pytest.approx(0.6)


def test_precision_perfect_ranking():
    m = np.r_[np.ones(10), np.zeros(290)]
    truth = np.r_[np.ones(60, int), np.zeros(240, int)]
    assert precision_at_k(m, truth, 10) == 1.0


def test_precision_uniform_memberships_is_chance():
    rng = np.random.default_rng(0)
    truth = np.r_[np.ones(60, int), np.zeros(240, int)]
    scores = [precision_at_k(np.full(300, 0.5), rng.permutation(truth), 10) for _ in range(100)]
    assert abs(np.mean(scores) - 0.2) <= 0.1


def test_precision_ties_break_by_index():
    assert precision_at_k([0.5, 0.5, 0.5], [0, 1, 1], 1) == 0.0
    assert precision_at_k([0.5, 0.5, 0.5], [1, 0, 0], 1) == 1.0


def test_precision_k_too_large():
    with pytest.raises(ValueError):
        precision_at_k(np.ones(5), np.ones(5), 6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["exp", "cube", "affine"]))
def test_precision_invariant_to_monotone_transform(seed, kind):
    rng = np.random.default_rng(seed)
    m = rng.random(50)
    truth = rng.integers(0, 2, 50)
    f = {"exp": np.exp, "cube": lambda x: x**3, "affine": lambda x: 3 * x + 7}[kind]
    assert precision_at_k(f(m), truth, 10) == precision_at_k(m, truth, 10)


def test_best_slice_argmax():
    n = 20
    truth = np.r_[np.ones(10, int), np.zeros(10, int)]
    mem = np.zeros((n, 2))
    mem[:, 1] = np.r_[np.full(10, 0.9), np.full(10, 0.1)]
    mem[:, 0] = 1 - mem[:, 1]
    a = SliceAssignment(mem, [np.arange(10, 20), np.arange(10)], 0.5)
    assert best_slice(None, a, truth, 10) == (1, 1.0)


def test_best_slice_skips_empty_slice():
    truth = np.r_[np.zeros(10, int), np.ones(10, int)]
    mem = np.zeros((20, 3))
    mem[:, 1] = 1.0
    # slice 0 has zero mass; a raw index tie-break would rank samples 0..9 and score 0
    a = SliceAssignment(mem, [np.array([], int), np.arange(20), np.array([], int)], 0.5)
    j, _ = best_slice(None, a, truth, 5)
    assert j == 1


def test_best_slice_on_blobs(blobs):
    u, y, yhat = blobs
    truth = (yhat != y).astype(int)
    m = fit_slice_model(u, y, yhat, 2, 10.0)
    a = assign_slices(m, u, y, yhat)
    assert best_slice(m, a, truth, 10)[1] == 1.0


def small_cfg(**kw):
    return fixture_config("spurious_correlation", iterations=2, **kw)


@pytest.fixture(scope="module")
def two_iter_report():
    return bootstrap_audit(small_cfg())


def test_bootstrap_deterministic(two_iter_report):
    again = bootstrap_audit(small_cfg())
    assert report_json(again) == report_json(two_iter_report)


def test_bootstrap_parallel_matches_serial(two_iter_report):
    par = bootstrap_audit(small_cfg(workers=2))
    a, b = two_iter_report.to_dict(), par.to_dict()
    a.pop("config_echo"), b.pop("config_echo")
    assert a == b


def test_emit_report(tmp_path, two_iter_report):
    paths = emit_report(two_iter_report, tmp_path)
    assert [p.name for p in paths] == ["report.json", "summary.csv", "tokens.csv"]
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert len(rows) == 2
    assert [int(r["seed"]) for r in rows] == [0, 1]
    back = AuditReport.from_dict(json.loads((tmp_path / "report.json").read_text()))
    assert report_json(back) == report_json(two_iter_report)
    tokens = list(csv.DictReader(open(tmp_path / "tokens.csv")))
    freq = {t["token"]: int(t["frequency"]) for t in tokens}
    assert freq["tube"] == 2 == max(freq.values())


def test_emit_report_without_tokens(tmp_path):
    r = IterationResult(seed=0, valid=True, best_slice_precision_at_k=0.5, baseline_precision=0.4)
    report = aggregate([r], AuditConfig())
    emit_report(report, tmp_path)
    assert (tmp_path / "tokens.csv").read_text().strip() == "token,frequency,mean_ds,mean_r_attr"


def test_aggregate_means_over_valid_only():
    rs = [
        IterationResult(seed=2, valid=True, best_slice_precision_at_k=1.0, baseline_precision=0.5),
        IterationResult(seed=0, valid=False, reason="accuracy gap below 0.10"),
        IterationResult(seed=1, valid=True, best_slice_precision_at_k=0.6, baseline_precision=0.3),
    ]
    rep = aggregate(rs, AuditConfig())
    assert rep.mean_precision_at_k == pytest.approx(0.8)
    assert rep.mean_baseline_precision == pytest.approx(0.4)
    assert (rep.n_valid, rep.n_invalid) == (2, 1)
    assert [r.seed for r in rep.per_iteration] == [0, 1, 2]


def test_aggregate_all_invalid():
    with pytest.raises(AuditError, match="no valid iterations"):
        aggregate([IterationResult(seed=0, valid=False, reason="x")], AuditConfig())


def test_config_round_trip(tmp_path):
    cfg = fixture_config("noisy_label", iterations=7, top_n=3)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert load_config(tmp_path / "c.json") == cfg
    with pytest.raises(ValueError):
        AuditConfig.from_dict({"k_slices": 5, "bogus": 1})
