"""Seed sweeps over complete training runs, with on-disk reuse of finished runs."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .metrics import mean_off_diagonal, read_coverage_csv, read_overlap_csv
from .runner import RunConfig, train

DEFAULT_SWEEP_ROOT = "~/.cache/leads-lab/sweep"


@dataclass(frozen=True)
class RunOutcome:
    env: str
    objective: str
    seed: int
    final_coverage: float
    mean_overlap: float
    run_dir: Path
    seconds: float  # wall time from config.ini to the last output file


def sweep_root() -> Path:
    return Path(os.environ.get("LEADS_LAB_SWEEP", DEFAULT_SWEEP_ROOT)).expanduser()


def _finished(cfg: RunConfig) -> bool:
    d = cfg.run_dir()
    try:
        if (d / "config.ini").read_text() != cfg.to_ini():
            return False
        return len(read_coverage_csv(d / "coverage.csv").points) == cfg.epochs and (d / "overlap.csv").exists()
    except (OSError, ValueError, KeyError):
        return False


def outcome(cfg: RunConfig) -> RunOutcome:
    d = cfg.run_dir()
    curve = read_coverage_csv(d / "coverage.csv")
    seconds = (d / "overlap.csv").stat().st_mtime - (d / "config.ini").stat().st_mtime
    return RunOutcome(cfg.env, cfg.objective, cfg.seed, curve.points[-1][2],
                      mean_off_diagonal(read_overlap_csv(d / "overlap.csv")), d, seconds)


def ensure_run(env: str, objective: str, seed: int, epochs: int = 40, root: Path | None = None,
               log: Callable[[str], None] | None = None) -> RunOutcome:
    """Train unless an identical finished run already sits in the sweep folder."""
    root = root or sweep_root()
    cfg = RunConfig(env=env, seed=seed, epochs=epochs, objective=objective,
                    out=str(root / f"{env}_{objective}_seed{seed}"))
    if not _finished(cfg):
        if log:
            log(f"training {env} {objective} seed {seed}")
        res = train(cfg)
        if res.error:
            raise RuntimeError(f"{cfg.run_dir()}: {res.error}")
    return outcome(cfg)


def median_coverage(outcomes: list[RunOutcome]) -> float:
    return float(np.median([o.final_coverage for o in outcomes]))
