#!/usr/bin/env python3
"""Mean Precision@10 for each embedding configuration and failure mode.

    python3 scripts/modality_table.py --iterations 20
"""
import argparse
import itertools

from mmaudit.config import fixture_config
from mmaudit.evaluation import bootstrap_audit

KINDS = ("spurious_correlation", "rare_slice", "noisy_label")
MODS = ("img", "txt", "meta")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=20)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    configs = [c for r in range(1, 4) for c in itertools.combinations(MODS, r)]
    print(f"{'embedding':16s}" + "".join(f"{k:>22s}" for k in KINDS))
    baselines = {}
    for mods in configs:
        cells = []
        for kind in KINDS:
            rep = bootstrap_audit(fixture_config(kind, modalities=mods, iterations=args.iterations, workers=args.workers))
            baselines[kind] = rep.mean_baseline_precision
            cells.append(f"{rep.mean_precision_at_k:22.3f}")
        print(f"{'+'.join(mods):16s}" + "".join(cells))
    print(f"{'baseline':16s}" + "".join(f"{baselines[k]:22.3f}" for k in KINDS))


if __name__ == "__main__":
    main()
