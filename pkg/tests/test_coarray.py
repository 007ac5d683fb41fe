"""
Unit tests for lib.coarray.
"""

import math
from collections import Counter

import numpy as np
import pytest

from lib.coarray import (
    coarray_summary,
    contiguous_lags,
    difference_coarray,
    hole_percentage,
    holes,
    weight_table,
)
from lib.errors import ValidationError
from lib.geometry import coprime_1d, coprime_set, cpa, from_points, gcpa, rcpa, ura


def brute_force_weights(positions):
    counts = Counter()
    for (ux, uy) in positions:
        for (vx, vy) in positions:
            counts[(ux - vx, uy - vy)] += 1
    return dict(counts)


def brute_force_holes(weights):
    xs = [l[0] for l in weights]
    ys = [l[1] for l in weights]
    return {
        (x, y)
        for x in range(min(xs), max(xs) + 1)
        for y in range(min(ys), max(ys) + 1)
        if (x, y) not in weights
    }


@pytest.fixture(scope='module')
def rcpa_coarray():
    return difference_coarray(rcpa((2, 3)))


class TestRcpaCoarray:
    """Structure of the M=2, N=3 rectangular coprime coarray."""

    def test_contiguous_half_width(self, rcpa_coarray):
        assert rcpa_coarray.contiguous_half_width == 2 * 3 + 2 - 1

    def test_per_axis_missing_lags(self, rcpa_coarray):
        values = rcpa_coarray.per_axis_lags(0)
        assert values == [v for v in range(-9, 10) if abs(v) != 8]
        assert rcpa_coarray.per_axis_lags(1) == values

    def test_holes_are_the_plus_minus_eight_lines(self, rcpa_coarray):
        expected = {
            (x, y)
            for x in range(-9, 10)
            for y in range(-9, 10)
            if abs(x) == 8 or abs(y) == 8
        }
        assert set(holes(rcpa_coarray)) == expected
        assert len(expected) == 72

    def test_hole_fraction(self, rcpa_coarray):
        assert hole_percentage(rcpa_coarray) == pytest.approx(72 / 361, abs=1e-15)
        assert rcpa_coarray.bounding_box == (-9, 9, -9, 9)

    def test_lag_count(self, rcpa_coarray):
        assert rcpa_coarray.virtual_sensor_count == 289

    def test_degrees_of_freedom(self, rcpa_coarray):
        assert rcpa_coarray.degrees_of_freedom == 15 ** 2
        assert rcpa_coarray.music_dof == 63

    def test_weight_grid(self, rcpa_coarray):
        grid = rcpa_coarray.weight_grid()
        assert grid.shape == (19, 19)
        assert grid.sum() == 36 ** 2
        assert grid[9, 9] == 36
        assert grid[8 + 9, 0 + 9] == 0


class TestBruteForceOracle:
    """difference_coarray against ordered-pair enumeration."""

    def test_random_arrays(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            count = int(rng.integers(1, 13))
            points = {tuple(int(c) for c in p) for p in rng.integers(0, 9, size=(count, 2))}
            array = from_points(points)
            co = difference_coarray(array)
            expected = brute_force_weights(array.positions)

            assert dict(co.weights) == expected
            assert co.lags == frozenset(expected)
            assert sum(co.weights.values()) == array.size ** 2
            assert co.weights[(0, 0)] == array.size
            assert co.holes == frozenset(brute_force_holes(expected))

    def test_weights_are_symmetric(self):
        co = difference_coarray(cpa((3, 4)))
        for (lx, ly), count in co.weights.items():
            assert co.weights[(-lx, -ly)] == count


class TestOtherArrays:
    """Coarrays of other geometries."""

    def test_full_ura_has_no_holes(self):
        co = difference_coarray(ura(4, 4))
        assert len(co.holes) == 0
        assert co.contiguous_half_width == 3

    def test_cpa_hole_fraction_matches_enumeration(self):
        array = cpa((3, 4))
        co = difference_coarray(array)
        expected = brute_force_holes(brute_force_weights(array.positions))
        min_x, max_x, min_y, max_y = co.bounding_box
        box = (max_x - min_x + 1) * (max_y - min_y + 1)
        assert hole_percentage(co) == pytest.approx(len(expected) / box, abs=1e-15)

    def test_single_sensor(self):
        co = difference_coarray(from_points([(2, 5)]))
        assert co.lags == frozenset({(0, 0)})
        assert co.contiguous_half_width == 0
        assert hole_percentage(co) == 0.0

    def test_linear_array_has_no_vertical_extent(self):
        co = difference_coarray(coprime_1d((2, 3)))
        assert co.contiguous_half_width == 0
        assert co.bounding_box[2:] == (0, 0)


class TestHelpers:
    """contiguous_lags, weight_table and coarray_summary."""

    def test_contiguous_lags_size(self, rcpa_coarray):
        assert len(contiguous_lags(rcpa_coarray)) == 225

    def test_contiguous_lags_beyond_range(self, rcpa_coarray):
        with pytest.raises(ValidationError, match=r'lag \(-8, -8\) missing from coarray'):
            contiguous_lags(rcpa_coarray, 8)

    def test_weight_table_sorted(self, rcpa_coarray):
        table = weight_table(rcpa_coarray)
        assert list(table) == sorted(table)
        assert table[(0, 0)] == 36

    def test_summary_carries_reference_column(self, rcpa_coarray):
        co_cpa = difference_coarray(cpa((3, 4)))
        frame = coarray_summary([rcpa_coarray, co_cpa], {'rcpa(2,3)': 23.52})
        assert list(frame['label']) == ['rcpa(2,3)', 'cpa(3,4)']
        assert frame.loc[0, 'holes'] == 72
        assert frame.loc[0, 'hole_percent'] == pytest.approx(100 * 72 / 361)
        assert frame.loc[0, 'reference_hole_percent'] == 23.52
        assert np.isnan(frame.loc[1, 'reference_hole_percent'])


COPRIME_PAIRS = [(m, n) for n in range(3, 8) for m in range(2, n) if math.gcd(m, n) == 1]


class TestCoarrayProperties:
    """Structural properties across coprime pairs and geometries."""

    @pytest.mark.parametrize('pair', COPRIME_PAIRS)
    def test_rcpa_contiguous_half_width(self, pair):
        m, n = pair
        assert difference_coarray(rcpa(pair)).contiguous_half_width == m * n + m - 1

    @pytest.mark.parametrize('pair', [p for p in COPRIME_PAIRS if 2 * p[0] + p[1] - 1 <= 10])
    def test_rcpa_lags_are_product_of_linear_differences(self, pair):
        line = coprime_set(pair)
        linear = Counter(u - v for u in line for v in line)
        co = difference_coarray(rcpa(pair))
        assert co.lags == frozenset((a, b) for a in linear for b in linear)
        for (lx, ly), count in co.weights.items():
            assert count == linear[lx] * linear[ly]

    @pytest.mark.parametrize('array', [
        rcpa((2, 3)), rcpa((3, 4)), cpa((3, 4)), cpa((2, 3), offset=(1, 0)),
        gcpa(2, 3, 3, 4), coprime_1d((2, 5))
    ], ids=lambda a: a.label)
    def test_holes_symmetric_and_origin_weight_unique(self, array):
        co = difference_coarray(array)
        assert co.holes == frozenset((-x, -y) for (x, y) in co.holes)
        assert co.weights[(0, 0)] == array.size
        others = [count for lag, count in co.weights.items() if lag != (0, 0)]
        assert max(others, default=0) < co.weights[(0, 0)]
