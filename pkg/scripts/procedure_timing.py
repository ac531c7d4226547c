"""Time each stage of the full pipeline on one synthetic track set."""

import argparse
import time

import numpy as np

from hdde.diffusion import cross_validate, default_cv_grid
from hdde.pipeline import Sampler, fit_pipeline, simulate
from hdde.preimage import PreimageConfig
from hdde.trackdata import delta_pdist, synthesize_tracks
from hdde.validation import simulated_test


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=608)
    ap.add_argument("--heldout", type=int, default=60, help="tracks held out in cross-validation")
    ap.add_argument("--null", type=int, default=9)
    ap.add_argument("--seed", type=int, default=12)
    args = ap.parse_args()

    clock = [time.perf_counter()]

    def lap(label):
        now = time.perf_counter()
        print(f"{label:<12} {now - clock[0]:7.2f} s", flush=True)
        clock[0] = now

    ts = synthesize_tracks(args.n, seed=args.seed)
    D = delta_pdist(ts)
    lap("distances")
    held = np.sort(np.random.default_rng(args.seed).choice(args.n, args.heldout, replace=False))
    cv = cross_validate(ts, default_cv_grid(D, ts=(1,)), 3, PreimageConfig(), heldout=held, distances=D)
    lap("cv")
    fitted = fit_pipeline(ts, cv.best[0], cv.best[1], 3, distances=D)
    lap("fit")
    simulate(fitted, args.n, seed=args.seed)
    lap("simulate")
    report = simulated_test(Sampler(fitted, args.n), ts, args.null, seed=args.seed)
    lap("validate")
    print(f"epsilon {cv.best[0]:.1f}, k {fitted.density.k}, ell* {report.ell_star:.3f}, p {report.p_value:.3f}")


if __name__ == "__main__":
    main()
