"""Fit the pipeline to synthetic tracks and test its simulations, over several seeds.

    python3 scripts/end_to_end.py --n 300 --seeds 10 --null 39
"""

import argparse
import time

import numpy as np

from hdde.pipeline import Sampler, fit_pipeline
from hdde.trackdata import delta_pdist, synthesize_tracks
from hdde.validation import simulated_test


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--null", type=int, default=39, help="null replicates per seed")
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--alpha", type=float, default=0.05)
    args = ap.parse_args()

    ells, kept = [], 0
    for seed in range(args.seeds):
        start = time.perf_counter()
        ts = synthesize_tracks(args.n, seed=seed)
        D = delta_pdist(ts)
        eps = float(np.median(D[np.triu_indices(args.n, 1)] ** 2))
        report = simulated_test(Sampler(fit_pipeline(ts, eps, 1, args.m, distances=D), args.n), ts, args.null, seed=seed)
        ells.append(report.ell_star)
        kept += not report.rejects(args.alpha)
        print(
            f"seed {seed}: ell* {report.ell_star:.3f}  p {report.p_value:.3f}  "
            f"null {report.null.mean():.3f} +/- {report.null.std():.3f}  ({time.perf_counter() - start:.0f} s)",
            flush=True,
        )
    print(f"mean ell* {np.mean(ells):.3f}; not rejected in {kept}/{args.seeds}")


if __name__ == "__main__":
    main()
