"""What does the codebook counter track?  Rank-correlates the accumulated
counter with per-dimension encoder-output variance and with each dimension's
strongest factor correlation, for both counter averaging modes.

    python scripts/counter_diagnostics.py --seed 0
"""

import argparse

import numpy as np
from scipy.stats import spearmanr

from vqprosody import metrics, training, vq


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args()

    corpus = training.generate_corpus(args.n, seed=args.seed)
    counters = {}
    for mode in vq.COUNTER_MODES:
        cfg = training.TrainConfig(seed=args.seed, steps=args.steps, counter_mode=mode)
        _, _, _, model = training.train(corpus, cfg)
        counters[mode] = model.counter.accum
    # the counter mode does not influence training, so the last model serves both
    net = model.net
    lat = [net.encode(model.normalized_mel(u.wave), model.book) for u in corpus]
    z_e = np.concatenate([a.z_e for a in lat])
    means = np.stack([a.z_q_sequence.mean(axis=0) for a in lat])
    corr = metrics.factor_correlation(means, np.stack([u.factor_vector() for u in corpus]))
    quantities = {"z_e variance": z_e.var(axis=0), "max factor |r|": corr.matrix.max(axis=1)}
    print(f"codes in use: {len(np.unique(np.concatenate([a.indices for a in lat])))}")
    for mode, accum in counters.items():
        cells = [f"{name} {spearmanr(accum, q).statistic:+.2f}" for name, q in quantities.items()]
        print(f"{mode:14s} spearman vs " + ", ".join(cells))


if __name__ == "__main__":
    main()
