"""Fit the successor classifier on fixed gridworld skills and compare its
logits with the exact optimum.

    python3 scripts/fidelity.py --steps 2000 --seed 0
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from leads_lab.fidelity import gridworld_fidelity


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=5)
    args = ap.parse_args()
    t0 = time.perf_counter()
    res = gridworld_fidelity(steps=args.steps, seed=args.seed, size=args.size)
    err = np.abs(res.clf.logits(*_rows(res)) - res.target[tuple(res.tuples.T)])
    print(f"tuples {res.n_tuples}  median error {res.median_error:.4f}  "
          f"90th percentile {np.percentile(err, 90):.4f}  loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}  "
          f"({time.perf_counter() - t0:.1f} s)")


def _rows(res):
    env = res.buffers.env
    z, s1, a, s2 = res.tuples.T
    return env.encode(s1), env.encode_actions(a), env.encode(s2), res.emb[z]


if __name__ == "__main__":
    main()
