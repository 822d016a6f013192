"""Repeat the disentanglement check over several seeds and tabulate the outcome.

    python scripts/seed_sweep.py --seeds 0 1 2 3 4
"""

import argparse
import time

from vqprosody import training


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--codebook-scale", type=float, default=training.TrainConfig.codebook_scale)
    ap.add_argument("--counter-mode", default="mean_then_abs")
    args = ap.parse_args()

    print("seed\trecon_ratio\ttop5_hits\t" + "\t".join(f"{n}(dim,|r|,rank)" for n in training.FACTOR_NAMES)
          + "\tseconds")
    passing = 0
    for seed in args.seeds:
        t0 = time.perf_counter()
        corpus = training.generate_corpus(args.n, seed=seed)
        cfg = training.TrainConfig(seed=seed, steps=args.steps, counter_mode=args.counter_mode,
                                   codebook_scale=args.codebook_scale)
        _, _, log_, model = training.train(corpus, cfg)
        recon = log_.column("recon_loss")
        rep = training.disentangle_experiment(corpus, model)
        cells = [f"{d},{r:.2f},{k}" for _, d, r, k in rep.rows()]
        passing += rep.top5_hits >= 2
        print(f"{seed}\t{recon[-1] / recon[:10].mean():.3f}\t{rep.top5_hits}\t" + "\t".join(cells)
              + f"\t{time.perf_counter() - t0:.0f}", flush=True)
    print(f"seeds with >= 2 factor dims in the counter top-5: {passing}/{len(args.seeds)}")


if __name__ == "__main__":
    main()
