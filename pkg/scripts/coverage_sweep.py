"""Train (or reuse) the 40-epoch seed sweeps behind the coverage, ablation
and separation checks, then print a summary table.

    python3 scripts/coverage_sweep.py                 # everything
    python3 scripts/coverage_sweep.py --env u --objective diayn-ablation
"""
from __future__ import annotations

import argparse
import time

from leads_lab.sweep import ensure_run, median_coverage

JOBS = [("easy", "leads"), ("u", "leads"), ("u", "diayn-ablation"), ("hard", "leads")]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", choices=["easy", "u", "hard"])
    ap.add_argument("--objective", choices=["leads", "diayn-ablation"])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=40)
    args = ap.parse_args()
    jobs = [(e, o) for e, o in JOBS if args.env in (None, e) and args.objective in (None, o)]
    for env, obj in jobs:
        outs = []
        for seed in range(args.seeds):
            t0 = time.time()
            o = ensure_run(env, obj, seed, args.epochs, log=lambda m: print(m, flush=True))
            print(f"{env:5s} {obj:15s} seed {seed}  coverage {o.final_coverage:.3f}  "
                  f"overlap {o.mean_overlap:.3f}  ({time.time() - t0:.0f} s)", flush=True)
            outs.append(o)
        print(f"{env} {obj}: median coverage {median_coverage(outs):.3f}", flush=True)


if __name__ == "__main__":
    main()
