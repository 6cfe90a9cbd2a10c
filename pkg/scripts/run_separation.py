#!/usr/bin/env python3
"""Annotation-savings experiment: WCR vs RANDOM across seeds.

For each seed, measures the labeled fraction each strategy needs to
reach 95% of the full-annotation mAP on a held-out synthetic validation
set, then reports per-seed fractions, medians, and a one-sided sign test.

Usage:
    python3 scripts/run_separation.py [--seeds 20] [--target 0.95]
"""

from __future__ import annotations

import argparse

import numpy as np
from scipy.stats import binomtest

from alsel.config import RunConfig
from alsel.harness import fraction_to_reach, full_annotation_map, run_closed_loop, synth_spec_from_config
from alsel.scoring import Strategy
from alsel.simdet import synth_dataset


def indices(cfg: RunConfig):
    train = synth_dataset(synth_spec_from_config(cfg), cfg.seed_synth)
    val = synth_dataset(
        synth_spec_from_config(cfg, images=cfg.eval_images), cfg.seed_synth + 1, id_prefix="val"
    )
    return train, val


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--target", type=float, default=0.95, help="fraction of full-annotation mAP")
    parser.add_argument("--iterations", type=int, default=18)
    parser.add_argument("--batch-fraction", type=float, default=0.05)
    args = parser.parse_args()

    wcr_fracs, rand_fracs = [], []
    for i in range(args.seeds):
        cfg = RunConfig(
            iterations=args.iterations,
            batch_fraction=args.batch_fraction,
            k_max=4,
            seed_synth=100 + i,
            seed_init=i,
            seed_random=1000 + i,
            seed_simdet=i,
        )
        train, val = indices(cfg)
        target = args.target * full_annotation_map(cfg, train, val)
        fracs = {}
        for strategy in (Strategy.WCR, Strategy.RANDOM):
            t, v = indices(cfg)
            _, curve = run_closed_loop(cfg, strategy=strategy, train_index=t, val_index=v)
            fracs[strategy] = fraction_to_reach(curve, target)
        wcr_fracs.append(fracs[Strategy.WCR])
        rand_fracs.append(fracs[Strategy.RANDOM])
        print(f"seed {i:2d}: wcr {fracs[Strategy.WCR]:.3f}  random {fracs[Strategy.RANDOM]:.3f}")

    med_wcr, med_rand = float(np.median(wcr_fracs)), float(np.median(rand_fracs))
    wins = sum(a < b for a, b in zip(wcr_fracs, rand_fracs))
    ties = sum(a == b for a, b in zip(wcr_fracs, rand_fracs))
    n = args.seeds - ties
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    print(f"median labeled fraction: wcr {med_wcr:.3f} vs random {med_rand:.3f} "
          f"(ratio {med_wcr / med_rand:.2f})")
    print(f"wcr needed less annotation in {wins}/{n} informative seeds; sign test p = {p:.3g}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
