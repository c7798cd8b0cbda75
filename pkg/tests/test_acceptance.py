"""End-to-end acceptance criteria, each at its stated tolerance and time
budget. One summary line per criterion is printed at the end of the run.

The coverage, ablation and separation criteria reuse finished 40-epoch runs
from ``$LEADS_LAB_SWEEP`` (default ``~/.cache/leads-lab/sweep``) when their
config matches exactly, and train the missing ones otherwise (about 6 minutes
each on one core). ``scripts/coverage_sweep.py`` fills the same folder ahead of time.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest
from conftest import record

from leads_lab import checks
from leads_lab.fidelity import gridworld_fidelity
from leads_lab.runner import RunConfig, train
from leads_lab.sweep import ensure_run, median_coverage

SEEDS = range(5)
COVERAGE_FLOOR = {"easy": 0.90, "u": 0.70, "hard": 0.60}
RUN_BUDGET_S = 30 * 60


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def worst(cs):
    return [c for c in cs if not c.passed]


def test_criterion_01_mutual_information_ambiguity():
    cs, dt = timed(checks.suite_mi_ambiguity)
    z1, z2 = cs[0], cs[1]
    ok = z1.passed and z2.passed and dt < 1.0
    assert record(1, ok, f"MI of both skill sets = {z1.measured:.15f}, {z2.measured:.15f} "
                         f"(log 4 = {math.log(4):.15f}, tol 1e-12), {dt:.3f} s < 1 s")


def test_criterion_02_ssm_inverse_vs_power_series():
    cs, dt = timed(lambda: checks.suite_ssm_convergence(n=20, seed=3))
    diffs = [c for c in cs if "power series" in c.name]
    ok = len(diffs) == 20 and not worst(diffs) and dt < 5.0
    assert record(2, ok, f"max |inverse - power series| over 20 MDPs = {max(c.measured for c in diffs):.2e} "
                         f"(tol 1e-10), {dt:.2f} s < 5 s")


def test_criterion_03_bound_ordering():
    cs, dt = timed(lambda: checks.suite_bounds(n=100, seed=1))
    order = [c for c in cs if "diversity bound" in c.name]
    jensen = [c for c in cs if "dominance" in c.name]
    bad = worst(order) + worst(jensen)
    ok = len(order) == 100 and not bad and dt < 10.0
    assert record(3, ok, f"{len(bad)} violations over 100 instances (ordering and pointwise Jensen), "
                         f"{dt:.2f} s < 10 s")


def test_criterion_04_kl_decomposition():
    cs, dt = timed(lambda: checks.suite_kl_decomposition(n=20, seed=2))
    err = max(abs(c.measured - c.expected) for c in cs)
    ok = len(cs) == 20 and not worst(cs) and dt < 5.0
    assert record(4, ok, f"max |KL - weighted exploration sum| over 20 instances = {err:.2e} (tol 1e-9), "
                         f"{dt:.2f} s < 5 s")


def test_criterion_05_neural_ssm_fidelity():
    res, dt = timed(lambda: gridworld_fidelity(steps=2000, seed=0))
    ok = res.median_error <= 0.5 and dt < 120.0
    assert record(5, ok, f"median |f - log oracle ratio| = {res.median_error:.4f} over {res.n_tuples} visited "
                         f"tuples (<= 0.5), {dt:.1f} s < 120 s")


def test_criterion_06_gradient_check():
    cs, dt = timed(checks.suite_gradients)
    err = max(c.measured for c in cs)
    ok = not worst(cs) and dt < 60.0
    assert record(6, ok, f"worst per-coordinate relative error = {err:.2e} (<= 1e-4) on width-8 networks, "
                         f"{dt:.2f} s < 60 s")


def test_criterion_07_uncertainty_and_targets():
    cs, dt = timed(checks.suite_uncertainty)
    diff = max(c.measured for c in cs if "uncertainty" in c.name)
    argmax_ok = all(c.passed for c in cs if "argmax" in c.name)
    ok = not worst(cs) and dt < 10.0
    assert record(7, ok, f"max |neural - exact uncertainty| = {diff:.2e} (tol 1e-9), exhaustive argmax "
                         f"{'matched' if argmax_ok else 'MISMATCHED'}, {dt:.2f} s < 10 s")


@pytest.fixture(scope="module")
def sweep():
    jobs = [(e, "leads") for e in ("easy", "u", "hard")] + [("u", "diayn-ablation")]
    return {(e, o): [ensure_run(e, o, s, epochs=40) for s in SEEDS] for e, o in jobs}


def test_criterion_08_coverage(sweep):
    parts, ok = [], True
    for env, floor in COVERAGE_FLOOR.items():
        runs = sweep[(env, "leads")]
        med = median_coverage(runs)
        slowest = max(r.seconds for r in runs)
        ok &= med >= floor and slowest <= RUN_BUDGET_S
        per_seed = ", ".join(f"{r.final_coverage:.3f}" for r in runs)
        parts.append(f"{env} median {med:.3f} (>= {floor:.2f}; seeds {per_seed}; slowest {slowest / 60:.1f} min)")
    assert record(8, ok, "; ".join(parts))


def test_criterion_09_ablation_direction(sweep):
    ours, abl = median_coverage(sweep[("u", "leads")]), median_coverage(sweep[("u", "diayn-ablation")])
    assert record(9, ours > abl, f"U maze median coverage {ours:.3f} (leads) > {abl:.3f} (diayn-ablation)")


def test_criterion_10_skill_separation(sweep):
    vals = [r.mean_overlap for r in sweep[("easy", "leads")]]
    med = float(np.median(vals))
    assert record(10, med <= 0.35, f"Easy final-epoch mean off-diagonal overlap, median over seeds {med:.3f} "
                                   f"(<= 0.35; seeds {', '.join(f'{v:.3f}' for v in vals)})")


def test_criterion_11_determinism(tmp_path):
    dirs = []
    for name in ("a", "b"):
        cfg = RunConfig(env="easy", seed=11, epochs=2, out=str(tmp_path / name))
        assert train(cfg).error is None
        dirs.append(tmp_path / name)
    files = sorted(p.relative_to(dirs[0]) for p in dirs[0].glob("epoch_*/*")
                   if p.name == "report.csv" or p.suffix == ".ckpt")
    differ = [str(f) for f in files if (dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes()]
    ok = len(files) >= 6 and not differ
    assert record(11, ok, f"{len(files) - len(differ)}/{len(files)} report.csv and checkpoint files "
                          f"byte-identical across two seed-11 runs")
