"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Bootstrap runs are cached per module so criteria that share them (recovery,
marker tokens, fraction sweep, EM monotonicity) only pay for them once.
"""
import json
import time
from contextlib import contextmanager
from functools import lru_cache

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mmaudit.biaslab import round_half_up, synth_world, phi_correlation, noise_rate, rarity
from mmaudit.cli import main as cli_main
from mmaudit.config import fixture_config
from mmaudit.discovery import FitOptions, fit_slice_model, kmeans_pp_resp
from mmaudit.evaluation import bootstrap_audit
from mmaudit.explain import distinctiveness, fit_tfidf
from mmaudit.fusion import fit_pca
from mmaudit.ingest import TokenDoc
from oracles import brute_force_ds, covariance_eigen, reference_diag_gmm

FIXTURES = ("spurious_correlation", "rare_slice", "noisy_label")
SEEDS = 20

# every EM trace seen by the acceptance run, for the monotonicity check
EM_DECREASES: list[float] = []


@contextmanager
def criterion(n, text):
    detail = {}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE_LINES.append(f"[FAIL] criterion {n}: {text} {detail.get('msg', '')}".rstrip())
        raise
    ACCEPTANCE_LINES.append(f"[PASS] criterion {n}: {text} {detail.get('msg', '')}".rstrip())


def _track(trace):
    d = np.diff(np.asarray(trace))
    EM_DECREASES.append(float(max(0.0, -d.min())) if len(d) else 0.0)


@lru_cache(maxsize=None)
def bench(kind, **kw):
    t0 = time.perf_counter()
    report = bootstrap_audit(fixture_config(kind, iterations=SEEDS, **kw))
    elapsed = time.perf_counter() - t0
    for r in report.per_iteration:
        if r.em_max_decrease is not None:
            EM_DECREASES.append(r.em_max_decrease)
    return report, elapsed


def test_criterion_01_gamma_zero_matches_reference_gmm():
    with criterion(1, "gamma=0 EM equals reference diagonal GMM") as out:
        t0 = time.perf_counter()
        worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            centers = rng.normal(0, 3, (4, 8))
            u = centers[rng.integers(4, size=200)] + rng.standard_normal((200, 8))
            y = rng.integers(0, 2, 200)
            yhat = rng.integers(0, 2, 200)
            resp = kmeans_pp_resp(u, 8, np.random.default_rng(seed))
            opts = FitOptions(max_iters=100, tol=0.0, n_init=1)
            model = fit_slice_model(u, y, yhat, K=8, gamma=0.0, opts=opts, init_resp=resp)
            (w, mu, var), trace = reference_diag_gmm(u, resp, 100)
            _track(model.log_likelihood_trace)
            for got, want in ((model.weights, w), (model.means, mu), (model.variances, var)):
                worst = max(worst, float(np.abs(got - want).max()))
            worst = max(worst, abs(model.objective - trace[-1]))
        elapsed = time.perf_counter() - t0
        out["msg"] = f"(max abs diff {worst:.2e}, {elapsed:.1f}s)"
        assert worst <= 1e-8
        assert elapsed < 10


def test_criterion_02_pca_matches_eigendecomposition():
    with criterion(2, "PCA equals covariance eigendecomposition") as out:
        worst_val = worst_vec = 0.0
        for seed in range(5):
            x = np.random.default_rng(200 + seed).standard_normal((100, 20)) * np.linspace(0.5, 3, 20)
            model = fit_pca(x, 20)
            vals, vecs = covariance_eigen(x)
            worst_val = max(worst_val, float(np.abs(model.explained_variance - vals).max()))
            for c, v in zip(model.components, vecs):
                worst_vec = max(worst_vec, min(np.abs(c - v).max(), np.abs(c + v).max()))
        out["msg"] = f"(eigenvalues {worst_val:.1e}, components {worst_vec:.1e})"
        assert worst_val <= 1e-6
        assert worst_vec <= 1e-6


def test_criterion_03_distinctiveness_matches_brute_force():
    with criterion(3, "TF-IDF distinctiveness equals brute force on 50 docs") as out:
        rng = np.random.default_rng(3)
        vocab = [f"w{i}" for i in range(40)] + ["tube", "portable", "lateral"]
        docs = {f"d{i:02d}": list(rng.choice(vocab, rng.integers(0, 15))) for i in range(50)}
        ids = sorted(docs)
        err, ref = ids[:18], ids[18:]
        model = fit_tfidf([TokenDoc(k, v) for k, v in docs.items()])
        rep = distinctiveness(model, err, ref, top_n=len(model.vocabulary))
        oracle = brute_force_ds(docs, err, ref)
        worst = max(abs(e.ds - oracle[e.token]) for e in rep.entries)
        out["msg"] = f"(max abs diff {worst:.1e})"
        assert len(rep.entries) == len(oracle)
        assert worst <= 1e-12


INJECTOR_SETTINGS = [
    ("spurious_correlation", "device", 0.7),
    ("spurious_correlation", "device", 0.4),
    ("rare_slice", "lateral", 0.02),
    ("rare_slice", "lateral", 0.1),
    ("noisy_label", "portable", 0.30),
    ("noisy_label", "portable", 0.1),
]


def test_criterion_04_injector_round_trip():
    with criterion(4, "injectors re-measure to their targets over 20 seeds") as out:
        failures = []
        for kind, attr, strength in INJECTOR_SETTINGS:
            cfg = fixture_config(kind, attr=attr, strength=strength)
            for seed in range(SEEDS):
                train, _ = synth_world(cfg.world, cfg.bias, seed)
                if kind == "spurious_correlation":
                    phi = phi_correlation(1 - train.labels, train.tag(attr))
                    ok = abs(phi - strength) <= 0.05 and train.labels.sum() == len(train) // 2
                elif kind == "rare_slice":
                    n_t = int((train.labels == 1).sum())
                    n_cell = int(((train.labels == 1) & (train.tag(attr) == 1)).sum())
                    ok = n_cell == round_half_up(strength * n_t) and abs(rarity(train, cfg.bias) - strength) <= 0.05
                else:
                    flipped = train.tag("flipped")
                    group = ((train.labels ^ flipped) == 1) & (train.tag(attr) == 1)
                    ok = flipped.sum() == round_half_up(strength * group.sum()) and flipped[~group].sum() == 0
                    ok = ok and abs(noise_rate(train, cfg.bias) - strength) <= 0.05
                if not ok:
                    failures.append((kind, strength, seed))
        out["msg"] = f"({len(INJECTOR_SETTINGS) * SEEDS - len(failures)}/{len(INJECTOR_SETTINGS) * SEEDS} ok)"
        assert not failures, failures


def test_criterion_05_planted_slice_recovery():
    with criterion(5, "best-slice P@10 >= 0.8 and >= baseline + 0.05 on all fixtures") as out:
        parts, total, ok = [], 0.0, True
        for kind in FIXTURES:
            report, elapsed = bench(kind)
            total += elapsed
            p, b = report.mean_precision_at_k, report.mean_baseline_precision
            parts.append(f"{kind} {p:.3f} vs {b:.3f}")
            ok &= p >= 0.8 and p >= b + 0.05
        out["msg"] = f"({'; '.join(parts)}; {total:.0f}s)"
        assert ok
        assert total < 120


def test_criterion_06_marker_token_recovery():
    with criterion(6, "marker token in top-5 in >= 80% of valid iterations, mean r_attr > 0") as out:
        parts, ok = [], True
        for kind in FIXTURES:
            report, _ = bench(kind)
            cfg = fixture_config(kind)
            marker = cfg.world.marker(cfg.bias.attr)
            reports = report.token_reports()
            hits = [marker in tr.tokens[:5] for tr in reports]
            r_attr = [e.r_attr for tr in reports for e in tr.entries if e.token == marker and e.r_attr is not None]
            share = sum(hits) / report.n_valid
            mean_r = float(np.mean(r_attr)) if r_attr else float("nan")
            parts.append(f"{marker} {share:.0%} r_attr {mean_r:+.3f}")
            ok &= share >= 0.8 and mean_r > 0
        out["msg"] = f"({'; '.join(parts)})"
        assert ok


def test_criterion_07_more_underperforming_samples_help():
    with criterion(7, "noisy-label P@10 rises from fraction 0.2 to 0.3") as out:
        low, _ = bench("noisy_label")
        high, _ = bench("noisy_label", test_underperforming_fraction=0.3)
        out["msg"] = f"({low.mean_precision_at_k:.3f} -> {high.mean_precision_at_k:.3f})"
        assert high.mean_precision_at_k > low.mean_precision_at_k


def test_criterion_08_error_only_mode():
    with criterion(8, "error-only P@5 >= domino P@5 in >= 60% of seeds") as out:
        dom, _ = bench("noisy_label", precision_k=5)
        err, _ = bench("noisy_label", precision_k=5, mode="error_only")
        a = {r.seed: r.best_slice_precision_at_k for r in dom.per_iteration if r.valid}
        b = {r.seed: r.best_slice_precision_at_k for r in err.per_iteration if r.valid}
        common = sorted(a.keys() & b.keys())
        wins = sum(b[s] >= a[s] for s in common)
        out["msg"] = f"({wins}/{len(common)} seeds; {err.mean_precision_at_k:.3f} vs {dom.mean_precision_at_k:.3f})"
        assert common and wins / len(common) >= 0.6


def test_criterion_09_bench_is_deterministic(tmp_path):
    with criterion(9, "audit bench twice gives byte-identical report.json") as out:
        cfg = fixture_config("spurious_correlation", iterations=3, base_seed=11)
        (tmp_path / "cfg.json").write_text(json.dumps(cfg.to_dict()))
        blobs = []
        for run in ("a", "b"):
            assert cli_main(["bench", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / run)]) == 0
            blobs.append((tmp_path / run / "report.json").read_bytes())
        out["msg"] = f"({len(blobs[0])} bytes)"
        assert blobs[0] == blobs[1]


def test_criterion_10_em_monotone():
    with criterion(10, "no EM trace decreases by more than 1e-6") as out:
        for kind in FIXTURES:
            bench(kind)
        out["msg"] = f"({len(EM_DECREASES)} traces, worst decrease {max(EM_DECREASES):.1e})"
        assert max(EM_DECREASES) <= 1e-6
