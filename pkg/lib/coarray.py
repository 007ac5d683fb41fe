import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Tuple

import numpy as np
import pandas as pd

from lib.errors import ValidationError

logger = logging.getLogger(__name__)

Lag = Tuple[int, int]


@dataclass(frozen=True)
class Coarray:

    """Difference coarray of a sensor array.

    `weights` maps every lag to its multiplicity in the ordered-pair
    difference multiset; `lags` is its key set. Holes are counted inside the
    tight bounding box of all lags, isolated extreme lags included.
    """

    lags: frozenset
    weights: Mapping[Lag, int]
    contiguous_half_width: int
    bounding_box: Tuple[int, int, int, int]
    holes: frozenset
    sensor_count: int
    label: str = 'array'

    @property
    def bounding_box_points(self):
        min_x, max_x, min_y, max_y = self.bounding_box
        return (max_x - min_x + 1) * (max_y - min_y + 1)

    @property
    def hole_fraction(self):
        return len(self.holes) / self.bounding_box_points

    @property
    def virtual_sensor_count(self):
        return len(self.lags)

    @property
    def degrees_of_freedom(self):
        """Virtual sensors in the contiguous square, (2h+1)^2."""
        return (2 * self.contiguous_half_width + 1) ** 2

    @property
    def music_dof(self):
        """Largest source count the one-sided virtual URA can resolve."""
        return (self.contiguous_half_width + 1) ** 2 - 1

    def per_axis_lags(self, axis=0):
        """Lag values on the x (axis=0) or y (axis=1) line through the origin."""
        other = 1 - axis
        return sorted(l[axis] for l in self.lags if l[other] == 0)

    def weight_grid(self):
        """Dense weight matrix over the bounding box, indexed [x - min_x, y - min_y]."""
        min_x, max_x, min_y, max_y = self.bounding_box
        grid = np.zeros((max_x - min_x + 1, max_y - min_y + 1), dtype=np.int64)
        for (lx, ly), count in self.weights.items():
            grid[lx - min_x, ly - min_y] = count
        return grid

    def weight(self, lag):
        return self.weights.get(tuple(lag), 0)


def pairwise_differences(positions):
    """All ordered-pair differences p - q as an (n*n, 2) array, row p major."""
    p = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    return (p[:, None, :] - p[None, :, :]).reshape(-1, 2)


def difference_coarray(array):
    positions = array.as_array()
    diffs = pairwise_differences(positions)
    unique, counts = np.unique(diffs, axis=0, return_counts=True)
    weights = {
        (int(lx), int(ly)): int(c) for (lx, ly), c in zip(unique, counts)
    }
    lags = frozenset(weights)
    bounding_box = (
        int(unique[:, 0].min()), int(unique[:, 0].max()),
        int(unique[:, 1].min()), int(unique[:, 1].max())
    )
    h = _contiguous_half_width(lags)
    hole_set = _holes(lags, bounding_box)

    co = Coarray(
        lags=lags,
        weights=MappingProxyType(weights),
        contiguous_half_width=h,
        bounding_box=bounding_box,
        holes=hole_set,
        sensor_count=array.size,
        label=array.label
    )
    logger.info(
        f'{array.label}: {len(lags)} lags, contiguous half-width {h}, '
        f'{len(hole_set)} holes ({100 * co.hole_fraction:.2f}% of bounding box)'
    )
    return co


def _contiguous_half_width(lags):
    h = 0
    while True:
        k = h + 1
        ring = [(x, y) for x in range(-k, k + 1) for y in (-k, k)]
        ring += [(x, y) for x in (-k, k) for y in range(-k + 1, k)]
        if not all(p in lags for p in ring):
            return h
        h = k


def _holes(lags, bounding_box):
    min_x, max_x, min_y, max_y = bounding_box
    return frozenset(
        (x, y)
        for x in range(min_x, max_x + 1)
        for y in range(min_y, max_y + 1)
        if (x, y) not in lags
    )


def contiguous_range(co):
    return co.contiguous_half_width


def holes(co):
    return co.holes


def hole_percentage(co):
    """Hole count over bounding-box lattice points, as a fraction in [0, 1]."""
    return co.hole_fraction


def weight_table(co):
    return {lag: co.weights[lag] for lag in sorted(co.weights)}


def contiguous_lags(co, half_width=None):
    """Lags of the centered square [-h, h]^2, row-major in (x, y).

    Raises ValidationError naming the first lag missing from the coarray
    when `half_width` exceeds the contiguous range.
    """
    h = co.contiguous_half_width if half_width is None else int(half_width)
    if h < 0:
        raise ValidationError(f'half width {h} is negative', field='half_width')
    lags = [(x, y) for x in range(-h, h + 1) for y in range(-h, h + 1)]
    for lag in lags:
        if lag not in co.lags:
            raise ValidationError(f'lag {lag} missing from coarray', field='half_width')
    return lags


def coarray_summary(coarrays, references=None):
    """One row per coarray, the analogue of a hole-percentage table.

    `references` maps a label to a quoted hole percentage that is shown in
    its own column and never compared against.
    """
    references = references or {}
    rows = []
    for co in coarrays:
        rows.append({
            'label': co.label,
            'sensors': co.sensor_count,
            'unique_lags': co.virtual_sensor_count,
            'contiguous_half_width': co.contiguous_half_width,
            'holes': len(co.holes),
            'bounding_box_points': co.bounding_box_points,
            'hole_percent': 100 * co.hole_fraction,
            'reference_hole_percent': references.get(co.label, np.nan)
        })
    return pd.DataFrame(rows)
