"""How often simulation-based dimension selection recovers the generator's 3 latent factors.

    python3 scripts/dimension_selection.py --n 200 --sims 15 --seeds 10
"""

import argparse
import time

from hdde.trackdata import synthesize_tracks
from hdde.validation import select_dimension


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--sims", type=int, default=15)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--candidates", type=int, nargs="+", default=[2, 3, 4])
    args = ap.parse_args()

    picks = []
    for seed in range(args.seeds):
        start = time.perf_counter()
        res = select_dimension(synthesize_tracks(args.n, seed=1000 + seed), args.candidates, args.sims, seed=seed)
        picks.append(res.selected)
        ratios = "  ".join(f"m={m}: {v:.3f}" for m, v in res.mean_ratio.items())
        print(f"seed {seed}: selected {res.selected}  {ratios}  ({time.perf_counter() - start:.0f} s)", flush=True)
    print(f"m=3 selected in {picks.count(3)}/{args.seeds}")


if __name__ == "__main__":
    main()
