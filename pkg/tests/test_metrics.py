from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leads_lab.envs import Episode
from leads_lab.metrics import (CoverageCurve, CoverageGrid, emit_outputs, mean_off_diagonal, normalize_field,
                               overlap_matrix, pca_project, read_coverage_csv, read_overlap_csv, read_ppm,
                               write_ppm)


def ident(states):
    return states


def ep(skill, points):
    pts = np.asarray(points, dtype=float)
    return Episode(skill, pts, np.zeros((len(pts) - 1, 2)))


def test_cells_are_row_major_and_edges_clip():
    g = CoverageGrid(1, resolution=4)
    cells = g.cells_of([[-1.0, -1.0], [0.99, -1.0], [-1.0, 0.99], [1.0, 1.0], [-0.4, 0.1]])
    np.testing.assert_array_equal(cells, [0, 3, 12, 15, 2 * 4 + 1])


def test_coverage_fraction_counts_distinct_cells():
    g = CoverageGrid(2, resolution=4, reachable=set(range(8)))
    g.update(ep(0, [[-0.9, -0.9], [-0.9, -0.9], [-0.4, -0.9]]), ident)
    g.update(ep(1, [[-0.4, -0.9], [0.6, -0.4]]), ident)
    assert g.per_skill == [{0, 1}, {1, 7}]
    assert g.n_cells == 3 and g.fraction == pytest.approx(3 / 8)
    assert g.counts[0, 0] == 2
    g.check_union()


def test_visit_outside_reachable_set_is_an_error():
    g = CoverageGrid(1, resolution=4, reachable={0})
    with pytest.raises(AssertionError):
        g.update(ep(0, [[-0.9, -0.9], [0.9, 0.9]]), ident)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
                                                       min_size=2, max_size=6)), min_size=1, max_size=8))
def test_coverage_union_and_monotone_curve(episodes):
    g = CoverageGrid(3, resolution=8)
    curve = CoverageCurve()
    samples = 0
    for skill, pts in episodes:
        g.update(ep(skill, pts), ident)
        samples += len(pts) - 1
        curve.append(samples, g.n_cells, g.fraction)
        g.check_union()
    assert 0 < g.fraction <= 1


def test_curve_rejects_decrease():
    c = CoverageCurve()
    c.append(10, 5, 0.5)
    with pytest.raises(ValueError):
        c.append(20, 4, 0.4)


def test_overlap_examples():
    m = overlap_matrix([{1, 2}, {2, 3}, set()])
    np.testing.assert_allclose(m, [[1, 1 / 3, 0], [1 / 3, 1, 0], [0, 0, 0]])
    assert mean_off_diagonal(m) == pytest.approx((2 / 3) / 6)
    assert mean_off_diagonal(np.ones((1, 1))) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sets(st.integers(0, 30), max_size=10), min_size=1, max_size=5))
def test_overlap_is_symmetric_and_bounded(sets):
    m = overlap_matrix(sets)
    np.testing.assert_array_equal(m, m.T)
    assert np.all((m >= 0) & (m <= 1))


def test_pca_recovers_dominant_axis():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 3)) * [5.0, 1.0, 0.1]
    res = pca_project(X, dims=2)
    assert abs(res.components[0] @ [1, 0, 0]) == pytest.approx(1.0, abs=1e-3)
    ref = np.sort(np.linalg.eigvalsh(np.cov(X.T)))[::-1][:2]
    np.testing.assert_allclose(res.variances, ref, rtol=1e-6)
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(2), atol=1e-10)
    assert res.points.shape == (500, 2) and not res.rank_deficient


def test_pca_flags_rank_deficiency_and_rejects_few_states():
    line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    res = pca_project(line, dims=2)
    assert res.rank_deficient and res.components.shape == (1, 3)
    with pytest.raises(ValueError):
        pca_project(np.zeros((5, 3)))


def test_ppm_roundtrip_and_constant_field(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n4 3\n255\n")
    np.testing.assert_allclose(read_ppm(tmp_path / "a.ppm"), img, atol=1 / 255)
    np.testing.assert_array_equal(normalize_field(np.full((2, 2), 3.0)), 0.5)


def test_emit_outputs_roundtrip(tmp_path):
    g = CoverageGrid(2, resolution=4)
    g.update(ep(0, [[-0.9, -0.9], [0.9, 0.9]]), ident)
    curve = CoverageCurve()
    curve.append(1, g.n_cells, g.fraction)
    ov = overlap_matrix(g.per_skill)
    fields = {"ssm": np.random.default_rng(0).random((2, 4, 4))}
    written = emit_outputs(tmp_path, curve, g, ov, fields)
    assert read_coverage_csv(tmp_path / "coverage.csv").points == [(1, 2, 0.125)]
    np.testing.assert_allclose(read_overlap_csv(tmp_path / "overlap.csv"), ov)
    names = sorted(p.name for p in written if p.suffix == ".ppm")
    assert names == ["ssm_skill0.ppm", "ssm_skill1.ppm", "visited_skill0.ppm", "visited_skill1.ppm"]


def test_unwritable_output_names_the_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        write_ppm(tmp_path / "missing" / "x.ppm", np.zeros((2, 2)))
