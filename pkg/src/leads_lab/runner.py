"""Run configuration, the training driver that populates a run directory, and
the reader that summarizes one.

Run directory layout::

    config.ini            effective configuration
    seed.txt
    epoch_001/            one folder per finished epoch
        policy.ckpt
        classifier.ckpt
        report.csv
        targets.txt       (leads objective only)
        snapshot.ckpt     (archive size > 1 only)
    coverage.csv  overlap.csv  cells.csv  visits.csv
    heatmaps/*.ppm
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .envs import ENV_NAMES, make_env
from .leads import OBJECTIVES, EpochReport, HyperParams, Leads
from .metrics import (CoverageCurve, emit_outputs, mean_off_diagonal, overlap_matrix, read_coverage_csv,
                      read_overlap_csv, write_coverage_csv)
from .nn import CheckpointError, load_checkpoint, save_checkpoint

DEFAULT_OUT_ROOT = "runs"
RUN_KEYS = ("env", "seed", "epochs", "objective")


class ConfigError(ValueError):
    pass


class RunDirError(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    env: str = "easy"
    seed: int = 0
    epochs: int = 40
    objective: str = "leads"
    out: str | None = None
    hp: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        if self.env not in ENV_NAMES and not self.env.endswith(".json"):
            raise ConfigError(f"unknown env {self.env!r}; choose from {', '.join(ENV_NAMES)}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; choose from {', '.join(OBJECTIVES)}")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def run_dir(self) -> Path:
        if self.out:
            return Path(self.out)
        root = os.environ.get("LEADS_LAB_OUT", DEFAULT_OUT_ROOT)
        return Path(root) / f"{Path(self.env).stem}_{self.objective}_seed{self.seed}"

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {k: str(getattr(self, k)) for k in RUN_KEYS}
        cp["hyperparameters"] = {f.name: repr(getattr(self.hp, f.name)) for f in dataclasses.fields(HyperParams)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _convert(key: str, raw: str, kind: type):
    try:
        return kind(raw) if kind is not int else int(raw, 10)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def build_config(file_text: str | None = None, run_overrides: dict | None = None,
                 hp_overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge an INI text (sections ``run`` and ``hyperparameters``) with
    command-line overrides, which win. Unknown sections or keys are errors."""
    run: dict = {}
    hp: dict = {}
    if file_text:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(file_text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for section in cp.sections():
            if section == "run":
                run.update(cp[section])
            elif section == "hyperparameters":
                hp.update(cp[section])
            else:
                raise ConfigError(f"unknown config section [{section}]")
    for k, v in (run_overrides or {}).items():
        if v is not None:
            run[k] = v
    hp.update(hp_overrides or {})

    unknown = sorted(set(run) - set(RUN_KEYS) - {"out"})
    if unknown:
        raise ConfigError(f"unknown run keys: {', '.join(unknown)}")
    types = HyperParams.field_types()
    unknown = sorted(set(hp) - set(types))
    if unknown:
        raise ConfigError(f"unknown hyperparameters: {', '.join(unknown)}")
    hp_values = {k: _convert(f"hp.{k}", str(v), types[k]) for k, v in hp.items()}
    try:
        params = HyperParams(**hp_values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kwargs = {}
    for k in RUN_KEYS:
        if k in run:
            kwargs[k] = _convert(k, str(run[k]), int) if k in ("seed", "epochs") else str(run[k])
    return RunConfig(out=run.get("out"), hp=params, **kwargs)


# --- training ------------------------------------------------------------------

def _epoch_dir(run_dir: Path, epoch: int) -> Path:
    return run_dir / f"epoch_{epoch:03d}"


def _clear_previous(run_dir: Path) -> None:
    for p in run_dir.glob("epoch_[0-9][0-9][0-9]"):
        shutil.rmtree(p)
    for name in ("coverage.csv", "overlap.csv", "cells.csv", "visits.csv", "config.ini", "seed.txt"):
        (run_dir / name).unlink(missing_ok=True)
    if (run_dir / "heatmaps").is_dir():
        shutil.rmtree(run_dir / "heatmaps")


def write_epoch(run_dir: Path, algo: Leads, report: EpochReport) -> Path:
    d = _epoch_dir(run_dir, report.epoch)
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(d / "policy.ckpt", "policy", algo.policy.shape, algo.policy.params, report.epoch)
    save_checkpoint(d / "classifier.ckpt", "classifier", algo.clf.shape, algo.clf.params, report.epoch)
    if algo.hp.n_archive > 1:  # archived measures older than the newest feed the heatmaps
        snap = algo.archive.classifiers()[-1]
        save_checkpoint(d / "snapshot.ckpt", "classifier", snap.shape, snap.params, report.epoch)
    with open(d / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.CSV_HEADER)
        w.writerow(report.csv_row())
    if report.targets is not None:
        lines = [f"{z} " + " ".join(repr(float(x)) for x in t) for z, t in enumerate(report.targets)]
        (d / "targets.txt").write_text("\n".join(lines) + "\n")
    return d


def _write_cells(run_dir: Path, algo: Leads, final_cells: list[set[int]]) -> None:
    with open(run_dir / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["skill", "cells", "final_epoch_cells"])
        for z in range(algo.hp.n_skill):
            w.writerow([z, len(algo.grid.per_skill[z]), len(final_cells[z]) if final_cells else 0])
    with open(run_dir / "visits.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["skill", "cell", "count"])
        for z, cell in zip(*np.nonzero(algo.grid.counts)):
            w.writerow([int(z), int(cell), int(algo.grid.counts[z, cell])])


@dataclass
class TrainResult:
    run_dir: Path
    reports: list[EpochReport]
    error: str | None = None


def train(cfg: RunConfig, log: Callable[[str], None] | None = None) -> TrainResult:
    """Run the epoch budget and populate the run directory. A non-finite
    update or broken invariant stops training; outputs of finished epochs stay
    on disk and the error is returned in the result."""
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    _clear_previous(run_dir)
    (run_dir / "config.ini").write_text(cfg.to_ini())
    (run_dir / "seed.txt").write_text(f"{cfg.seed}\n")

    algo = Leads(make_env(cfg.env), cfg.hp, seed=cfg.seed, objective=cfg.objective)
    reports: list[EpochReport] = []
    error = None
    for _ in range(cfg.epochs):
        try:
            rep = algo.train_epoch()
        except (FloatingPointError, AssertionError) as exc:
            error = f"epoch {algo.epoch}: {type(exc).__name__}: {exc}"
            break
        reports.append(rep)
        write_epoch(run_dir, algo, rep)
        write_coverage_csv(run_dir / "coverage.csv", algo.curve)
        if log:
            log(f"epoch {rep.epoch:3d}  samples {rep.samples:6d}  cells {rep.cells:4d}  "
                f"coverage {rep.fraction:.3f}  objective {rep.objective:.4f}")
    final_cells = reports[-1].epoch_cells if reports else []
    overlap = overlap_matrix(final_cells) if final_cells else None
    fields = algo.grid_fields() if reports and error is None else {}
    emit_outputs(run_dir, algo.curve, algo.grid, overlap, fields)
    _write_cells(run_dir, algo, final_cells)
    return TrainResult(run_dir, reports, error)


# --- reporting -------------------------------------------------------------------

@dataclass
class RunSummary:
    name: str
    config: RunConfig
    epochs: int
    curve: CoverageCurve
    skill_cells: list[tuple[int, int]]  # (all-epoch cells, final-epoch cells) per skill
    overlap: np.ndarray

    def text(self) -> str:
        samples, cells, fraction = self.curve.points[-1]
        lines = [
            f"run: {self.name}",
            f"env: {self.config.env}  objective: {self.config.objective}  seed: {self.config.seed}  "
            f"epochs: {self.epochs}",
            f"final coverage: {fraction:.6f} ({cells} cells, {samples} samples)",
            f"skills: {len(self.skill_cells)}",
        ]
        for z, (total, last) in enumerate(self.skill_cells):
            lines.append(f"  skill {z}: {total} cells ({last} in final epoch)")
        lines.append("overlap matrix (final epoch, Jaccard):")
        for row in self.overlap:
            lines.append("  " + " ".join(f"{v:.3f}" for v in row))
        lines.append(f"mean off-diagonal overlap: {mean_off_diagonal(self.overlap):.6f}")
        return "\n".join(lines) + "\n"


def _epochs_in(run_dir: Path) -> list[int]:
    return sorted(int(p.name[6:]) for p in run_dir.glob("epoch_[0-9][0-9][0-9]") if p.is_dir())


def _read_targets(path: Path) -> list[np.ndarray]:
    out = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if parts:
            out.append(np.array([float(x) for x in parts[1:]]))
    return out


def load_run(run_dir) -> tuple[RunSummary, Leads]:
    """Validate a run directory and rebuild the final-epoch model state."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise RunDirError(f"{run_dir}: not a directory")
    required = ["config.ini", "coverage.csv", "overlap.csv", "cells.csv", "visits.csv"]
    missing = [str(run_dir / n) for n in required if not (run_dir / n).is_file()]
    epochs = _epochs_in(run_dir)
    if not epochs:
        missing.append(str(run_dir / "epoch_001"))
    else:
        last = _epoch_dir(run_dir, epochs[-1])
        missing += [str(last / n) for n in ("policy.ckpt", "classifier.ckpt", "report.csv")
                    if not (last / n).is_file()]
    if missing:
        raise RunDirError("missing files:\n  " + "\n  ".join(missing))

    cfg = build_config((run_dir / "config.ini").read_text())
    cfg.out = str(run_dir)
    E = epochs[-1]
    last = _epoch_dir(run_dir, E)
    algo = Leads(make_env(cfg.env), cfg.hp, seed=cfg.seed, objective=cfg.objective)
    for name, model in (("policy", algo.policy), ("classifier", algo.clf)):
        ck = load_checkpoint(last / f"{name}.ckpt")
        if ck.tag != name or list(ck.shape) != list(model.shape) or ck.params.size != model.params.size:
            raise CheckpointError(f"{last / (name + '.ckpt')}: does not match the configured {name} network")
        model.params[...] = ck.params
    for e in range(max(1, E - cfg.hp.n_archive + 1), E + 1):
        p = _epoch_dir(run_dir, e) / "snapshot.ckpt"
        if e == E:
            algo.archive.push(e, algo.clf)
        elif p.is_file():
            clf = algo.clf.copy()
            clf.params[...] = load_checkpoint(p).params
            algo.archive.push(e, clf)
        else:
            raise RunDirError(f"missing files:\n  {p}")
    if cfg.objective == "leads":
        tpath = last / "targets.txt"
        if not tpath.is_file():
            raise RunDirError(f"missing files:\n  {tpath}")
        algo.prev_targets = _read_targets(tpath)
    algo.epoch = E

    with open(run_dir / "visits.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            z, cell, n = int(row["skill"]), int(row["cell"]), int(row["count"])
            algo.grid.counts[z, cell] = n
            algo.grid.per_skill[z].add(cell)
            algo.grid.aggregate.add(cell)
    with open(run_dir / "cells.csv", newline="") as fh:
        skill_cells = [(int(r["cells"]), int(r["final_epoch_cells"])) for r in csv.DictReader(fh)]
    curve = read_coverage_csv(run_dir / "coverage.csv")
    algo.curve = curve
    overlap = read_overlap_csv(run_dir / "overlap.csv")
    return RunSummary(run_dir.name, cfg, E, curve, skill_cells, overlap), algo


def report(run_dir) -> RunSummary:
    """Summarize a run and regenerate its heatmaps from the final checkpoints."""
    summary, algo = load_run(run_dir)
    emit_outputs(Path(run_dir), summary.curve, algo.grid, summary.overlap, algo.grid_fields())
    return summary
