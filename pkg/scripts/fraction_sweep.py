#!/usr/bin/env python3
"""Precision@10 as the share of underperforming test samples grows.

Writes a CSV (and a PNG if matplotlib is importable).

    python3 scripts/fraction_sweep.py --kind noisy_label --iterations 20
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from mmaudit.config import fixture_config
from mmaudit.evaluation import bootstrap_audit

MODALITY_SETS = {
    "image": ("img",),
    "image+text": ("img", "txt"),
    "image+metadata": ("img", "meta"),
    "all": ("img", "txt", "meta"),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", default="noisy_label")
    ap.add_argument("--fractions", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4])
    ap.add_argument("--iterations", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/fraction_sweep")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, mods in MODALITY_SETS.items():
        for frac in args.fractions:
            cfg = fixture_config(
                args.kind,
                modalities=mods,
                test_underperforming_fraction=frac,
                iterations=args.iterations,
                workers=args.workers,
            )
            rep = bootstrap_audit(cfg)
            rows.append((name, frac, rep.mean_precision_at_k, rep.mean_baseline_precision))
            print(f"{name:16s} {frac:.2f}  P@10 {rep.mean_precision_at_k:.3f}  baseline {rep.mean_baseline_precision:.3f}")

    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["modalities", "fraction", "precision", "baseline_precision"])
        w.writerows(rows)

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in MODALITY_SETS:
        pts = np.array([(f, p) for n, f, p, _ in rows if n == name])
        ax.plot(pts[:, 0], pts[:, 1], marker="o", label=name)
    base = np.array([(f, b) for n, f, _, b in rows if n == "all"])
    ax.plot(base[:, 0], base[:, 1], "k--", label="baseline")
    ax.set_xlabel("underperforming fraction of test set")
    ax.set_ylabel("Precision@10")
    ax.set_title(args.kind.replace("_", " "))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "sweep.png", dpi=150)


if __name__ == "__main__":
    main()
