"""Coverage measurement, skill-overlap diagnostics, PCA projection and file
output (CSV tables and PPM heatmaps)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .envs import Episode


class CoverageGrid:
    """Visited-cell sets of a discretized feature space, per skill and in
    aggregate. Cells are flat indices ``iy * G + ix``."""

    def __init__(self, n_skill: int, resolution: int = 32, bounds=((-1.0, -1.0), (1.0, 1.0)),
                 reachable: set[int] | None = None):
        if resolution < 1:
            raise ValueError("resolution must be positive")
        self.n_skill = n_skill
        self.resolution = resolution
        self.lo = np.asarray(bounds[0], dtype=float)
        self.hi = np.asarray(bounds[1], dtype=float)
        self.reachable = reachable
        self.per_skill: list[set[int]] = [set() for _ in range(n_skill)]
        self.aggregate: set[int] = set()
        self.counts = np.zeros((n_skill, resolution * resolution), dtype=np.int64)

    def cells_of(self, features: np.ndarray) -> np.ndarray:
        f = np.atleast_2d(np.asarray(features, dtype=float))
        g = self.resolution
        idx = np.floor((f - self.lo) / (self.hi - self.lo) * g).astype(np.int64)
        idx = np.clip(idx, 0, g - 1)
        return idx[:, 1] * g + idx[:, 0]

    def update(self, episode: Episode, featurize: Callable[[np.ndarray], np.ndarray]) -> "CoverageGrid":
        cells = self.cells_of(featurize(episode.states))
        new = set(cells.tolist())
        if self.reachable is not None:
            stray = new - self.reachable
            assert not stray, f"visited cells outside the reachable set: {sorted(stray)[:5]}"
        self.per_skill[episode.skill] |= new
        self.aggregate |= new
        np.add.at(self.counts[episode.skill], cells, 1)
        return self

    @property
    def n_cells(self) -> int:
        return len(self.aggregate)

    @property
    def denominator(self) -> int:
        return len(self.reachable) if self.reachable is not None else self.resolution ** 2

    @property
    def fraction(self) -> float:
        return self.n_cells / self.denominator

    def check_union(self) -> None:
        union = set().union(*self.per_skill) if self.per_skill else set()
        assert union == self.aggregate, "aggregate cells differ from the union of per-skill cells"


@dataclass
class CoverageCurve:
    points: list[tuple[int, int, float]] = field(default_factory=list)

    def append(self, samples: int, cells: int, fraction: float) -> None:
        if self.points:
            s, c, f = self.points[-1]
            if samples < s or cells < c or fraction < f:
                raise ValueError("coverage curve must be non-decreasing")
        self.points.append((int(samples), int(cells), float(fraction)))


def overlap_matrix(cells: Sequence[set[int]]) -> np.ndarray:
    """Jaccard overlap |A & B| / |A | B| between per-skill cell sets."""
    n = len(cells)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            union = len(cells[i] | cells[j])
            out[i, j] = len(cells[i] & cells[j]) / union if union else 0.0
    return out


def mean_off_diagonal(mat: np.ndarray) -> float:
    n = mat.shape[0]
    if n < 2:
        return 0.0
    return float(mat[~np.eye(n, dtype=bool)].mean())


@dataclass
class PcaResult:
    points: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    variances: np.ndarray
    explained_ratio: np.ndarray
    rank_deficient: bool


def pca_project(states, dims: int = 2, tol: float = 1e-8, max_iter: int = 100_000) -> PcaResult:
    """Project centered states onto the top covariance eigenvectors found by
    power iteration with deflation."""
    X = np.asarray(states, dtype=float)
    if X.ndim != 2 or len(np.unique(X, axis=0)) < dims + 1:
        raise ValueError(f"need at least {dims + 1} distinct states")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (len(X) - 1)
    total = float(np.trace(C))
    work = C.copy()
    rng = np.random.default_rng(0)
    comps, lams = [], []
    deficient = False
    for _ in range(dims):
        v = rng.standard_normal(C.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = work @ v
            lam = float(v @ w)
            if np.linalg.norm(w - lam * v) <= tol * max(1.0, abs(lam)):
                break
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            v = w / nw
        if lam <= 1e-12 * max(total, 1e-300):
            deficient = True
            break
        for u in comps:  # keep exact orthogonality after deflation round-off
            v -= (u @ v) * u
        v /= np.linalg.norm(v)
        comps.append(v)
        lams.append(lam)
        work = work - lam * np.outer(v, v)
    comps = np.array(comps).reshape(len(comps), C.shape[0])
    lams = np.array(lams)
    ratio = lams / total if total > 0 else np.zeros_like(lams)
    return PcaResult(Xc @ comps.T, comps, lams, ratio, deficient)


# --- output --------------------------------------------------------------------

def normalize_field(values: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant field maps to 0.5 everywhere."""
    v = np.asarray(values, dtype=float)
    lo, hi = np.nanmin(v), np.nanmax(v)
    if not np.isfinite(lo) or hi - lo <= 0.0:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def write_ppm(path, image01: np.ndarray) -> None:
    """Binary PPM (P6) with equal RGB channels. Row 0 of ``image01`` is the
    bottom of the feature space, so rows are flipped for display."""
    img = np.clip(np.asarray(image01, dtype=float), 0.0, 1.0)[::-1]
    gray = np.round(img * 255.0).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    h, w = gray.shape
    path = Path(path)
    try:
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write heatmap {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = map(int, parts[1].split())
    rgb = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
    return rgb[::-1, :, 0] / 255.0


def write_coverage_csv(path, curve: CoverageCurve) -> None:
    _write_csv(path, ["samples", "cells", "fraction"],
               [[s, c, f"{f:.6f}"] for s, c, f in curve.points])


def read_coverage_csv(path) -> CoverageCurve:
    curve = CoverageCurve()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            curve.append(int(row["samples"]), int(row["cells"]), float(row["fraction"]))
    return curve


def write_overlap_csv(path, mat: np.ndarray) -> None:
    n = mat.shape[0]
    _write_csv(path, ["skill"] + [f"s{j}" for j in range(n)],
               [[i] + [f"{mat[i, j]:.6f}" for j in range(n)] for i in range(n)])


def read_overlap_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(x) for x in r[1:]] for r in rows]).reshape(len(rows), len(rows))


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_outputs(run_dir, curve: CoverageCurve, grid: CoverageGrid | None, overlap: np.ndarray | None,
                 fields: dict[str, np.ndarray] | None = None) -> list[Path]:
    """Write coverage.csv, overlap.csv and heatmaps into ``run_dir``.

    ``fields`` maps a name (e.g. ``"ssm"``, ``"uncertainty"``) to an array of
    shape (n_skill, G, G) indexed ``[skill, iy, ix]``; each skill's slice is
    normalized separately.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    written = [run_dir / "coverage.csv", run_dir / "overlap.csv"]
    write_coverage_csv(written[0], curve)
    write_overlap_csv(written[1], overlap if overlap is not None else np.zeros((0, 0)))
    heat = run_dir / "heatmaps"
    if grid is not None:
        heat.mkdir(exist_ok=True)
        g = grid.resolution
        for z in range(grid.n_skill):
            p = heat / f"visited_skill{z}.ppm"
            write_ppm(p, normalize_field(grid.counts[z].reshape(g, g)))
            written.append(p)
    for name, arr in (fields or {}).items():
        heat.mkdir(exist_ok=True)
        for z in range(arr.shape[0]):
            p = heat / f"{name}_skill{z}.ppm"
            write_ppm(p, normalize_field(arr[z]))
            written.append(p)
    return written
