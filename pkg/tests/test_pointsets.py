from functools import lru_cache

import numpy as np
import pytest

from sqmc import pointsets as lp

from oracles import gray_code, grid_extreme_discrepancy, radical_inverse_base2


@lru_cache(maxsize=None)
def iid_discrepancy_median(n, s=2, n_seeds=20):
    return np.median(
        [lp.measure_extreme_discrepancy(lp.generate_iid(n, s, seed=seed)) for seed in range(n_seeds)]
    )


def test_sobol_dim1_first_four_matches_radical_inverse():
    # Gray-code ordering: point i is the radical inverse of gray(i)
    expected = [radical_inverse_base2(gray_code(i)) for i in range(4)]
    assert expected == [0.0, 0.5, 0.75, 0.25]
    ps = lp.generate_sobol(4, 1)
    np.testing.assert_allclose(ps.points[:, 0], expected, rtol=0, atol=0)


def test_sobol_dim1_long_prefix_matches_radical_inverse():
    ps = lp.generate_sobol(128, 1)
    expected = [radical_inverse_base2(gray_code(i)) for i in range(128)]
    np.testing.assert_allclose(ps.points[:, 0], expected, rtol=0, atol=0)


@pytest.mark.parametrize("s", [1, 2, 7, 64, 512])
def test_sobol_first_point_is_origin(s):
    ps = lp.generate_sobol(1, s)
    assert ps.points.shape == (1, s)
    assert (ps.points == 0.0).all()


def test_sobol_beats_iid_at_256():
    d_sobol = lp.measure_extreme_discrepancy(lp.generate_sobol(256, 2))
    d_iid = lp.measure_extreme_discrepancy(lp.generate_iid(256, 2, seed=0))
    assert d_sobol < d_iid


def test_sobol_dimension_limits():
    with pytest.raises(lp.UnsupportedDimensionError):
        lp.generate_sobol(8, 513)
    with pytest.raises(lp.UnsupportedDimensionError):
        lp.generate_sobol(8, 0)
    with pytest.raises(ValueError):
        lp.generate_sobol(0, 2)


def test_scrambled_sobol_determinism_and_seed_sensitivity():
    a = lp.generate_sobol(64, 3, scramble_seed=7)
    b = lp.generate_sobol(64, 3, scramble_seed=7)
    c = lp.generate_sobol(64, 3, scramble_seed=8)
    assert (a.points == b.points).all()
    assert (a.points != c.points).any()
    assert (a.points >= 0).all() and (a.points < 1).all()


def test_scrambled_sobol_stays_low_discrepancy():
    d_iid = iid_discrepancy_median(256)
    for seed in range(3):
        d_scr = lp.measure_extreme_discrepancy(lp.generate_sobol(256, 2, scramble_seed=seed))
        assert d_scr < d_iid


def test_marginal_uniformity_of_scrambled_points():
    # fixed point index, 1000 scramble seeds: each coordinate uniform
    n_seeds = 1000
    us = np.array(
        [lp.generate_sobol(16, 2, scramble_seed=s).points[5] for s in range(n_seeds)]
    )
    ks_crit = 1.63 / np.sqrt(n_seeds)  # 1% critical value
    for j in range(2):
        sorted_u = np.sort(us[:, j])
        ranks = np.arange(1, n_seeds + 1) / n_seeds
        ks = max(
            np.max(np.abs(sorted_u - ranks)),
            np.max(np.abs(sorted_u - (ranks - 1.0 / n_seeds))),
        )
        assert ks < ks_crit


def test_iid_determinism_and_moments():
    a = lp.generate_iid(100, 3, seed=42)
    b = lp.generate_iid(100, 3, seed=42)
    c = lp.generate_iid(100, 3, seed=43)
    assert (a.points == b.points).all()
    assert (a.points != c.points).any()
    big = lp.generate_iid(10_000, 1, seed=5)
    assert 0.47 <= big.points.mean() <= 0.53


def test_sort_by_first_coordinate():
    ps = lp.PointSet(np.array([[0.75, 0.1], [0.25, 0.2]]), "iid")
    out = lp.sort_by_first_coordinate(ps)
    np.testing.assert_array_equal(out.points, [[0.25, 0.2], [0.75, 0.1]])
    assert out.sorted_by_first_coord
    again = lp.sort_by_first_coordinate(out)
    np.testing.assert_array_equal(again.points, out.points)


def test_sort_is_stable_on_ties():
    pts = np.array([[0.5, 0.3], [0.1, 0.9], [0.5, 0.1], [0.5, 0.7]])
    out = lp.sort_by_first_coordinate(lp.PointSet(pts, "iid"))
    np.testing.assert_array_equal(out.points, pts[[1, 0, 2, 3]])


def test_sort_preserves_multiset():
    rng = np.random.default_rng(0)
    pts = rng.random((50, 3))
    out = lp.sort_by_first_coordinate(lp.PointSet(pts, "iid"))
    assert sorted(map(tuple, pts)) == sorted(map(tuple, out.points))


# exact extreme discrepancy ----------------------------------------------------
#
# Values below are suprema over the closure of the box family, computed by
# the cell-run enumeration and cross-checked against the grid scan: a
# zero-volume box at an atom already realises (multiplicity)/N.

def test_discrepancy_single_point():
    ps = lp.PointSet(np.array([[0.5]]), "iid")
    assert lp.measure_extreme_discrepancy(ps) == pytest.approx(1.0)


def test_discrepancy_two_points():
    ps = lp.PointSet(np.array([[0.25], [0.75]]), "iid")
    assert lp.measure_extreme_discrepancy(ps) == pytest.approx(0.5)


def test_discrepancy_in_unit_interval():
    for seed in range(5):
        ps = lp.generate_iid(37, 2, seed=seed)
        val = lp.measure_extreme_discrepancy(ps)
        assert 0.0 <= val <= 1.0


@pytest.mark.parametrize("d", [1, 2])
def test_discrepancy_agrees_with_grid_scan(d):
    rng = np.random.default_rng(99)
    for _ in range(4):
        pts = rng.random((16, d))
        exact = lp.measure_extreme_discrepancy(lp.PointSet(pts, "iid"))
        approx = grid_extreme_discrepancy(pts, grid=64)
        assert 0.0 <= exact - approx <= 2.0 * d / 64 + 1e-12


def test_discrepancy_d3_small():
    rng = np.random.default_rng(3)
    pts = rng.random((16, 3))
    val = lp.measure_extreme_discrepancy(lp.PointSet(pts, "iid"))
    assert 1.0 / 16 <= val <= 1.0


def test_discrepancy_decay_and_iid_comparison():
    sizes = [16, 64, 256]
    d_sobol = [lp.measure_extreme_discrepancy(lp.generate_sobol(n, 2)) for n in sizes]
    for a, b in zip(d_sobol, d_sobol[1:]):
        assert b <= 2.0 * a  # nonincreasing within factor-2 tolerance
    for n, ds in zip(sizes, d_sobol):
        assert ds < iid_discrepancy_median(n)


def test_discrepancy_oracle_limits():
    with pytest.raises(lp.OracleLimitError):
        lp.measure_extreme_discrepancy(lp.generate_iid(513, 1, seed=0))
    rng = np.random.default_rng(0)
    with pytest.raises(lp.OracleLimitError):
        lp.measure_extreme_discrepancy(lp.PointSet(rng.random((4, 4)), "iid"))


def test_pointset_invariants():
    with pytest.raises(ValueError):
        lp.PointSet(np.array([[1.0]]), "iid")  # 1.0 excluded
    with pytest.raises(ValueError):
        lp.PointSet(np.array([[0.5, 0.2], [0.1, 0.3]]), "iid", sorted_by_first_coord=True)
    ps = lp.generate_sobol(8, 2)
    with pytest.raises(ValueError):
        ps.points[0, 0] = 0.3  # read-only


def test_csv_dump(tmp_path):
    ps = lp.generate_sobol(8, 2, scramble_seed=1)
    path = tmp_path / "points.csv"
    lp.save_points_csv(ps, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "u0,u1"
    parsed = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    np.testing.assert_array_equal(parsed, ps.points)
