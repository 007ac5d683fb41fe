import math
from dataclasses import dataclass

import numpy as np

from lib.errors import ValidationError


@dataclass(frozen=True)
class AxisRange:

    """Inclusive `start:stop:step` range."""

    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValidationError(f'grid step {self.step} must be positive', field='step')
        if self.stop < self.start:
            raise ValidationError(
                f'grid stop {self.stop} is below start {self.start}', field='stop'
            )

    @classmethod
    def parse(cls, text, field=None):
        try:
            start, stop, step = (float(part) for part in str(text).split(':'))
        except ValueError:
            raise ValidationError(
                f'expected start:stop:step, got {text!r}', field=field
            )
        return cls(start, stop, step)

    @property
    def count(self):
        return int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1

    def values(self):
        return np.round(self.start + self.step * np.arange(self.count), 12)

    def __str__(self):
        return f'{self.start:g}:{self.stop:g}:{self.step:g}'


@dataclass(frozen=True)
class SearchGrid:

    """Two-axis search or evaluation grid.

    kind='angles' means (azimuth, elevation) in degrees; kind='normalized'
    means normalized DOAs (theta', phi'). The spectrum matrices produced on
    the grid are indexed [first axis, second axis].
    """

    first: AxisRange
    second: AxisRange
    kind: str = 'angles'

    def __post_init__(self):
        if self.kind not in ('angles', 'normalized'):
            raise ValidationError(f'unknown grid kind {self.kind!r}', field='kind')

    @classmethod
    def angles(cls, az, el):
        return cls(_as_range(az, 'az'), _as_range(el, 'el'), 'angles')

    @classmethod
    def normalized(cls, theta, phi):
        return cls(_as_range(theta, 'theta'), _as_range(phi, 'phi'), 'normalized')

    @classmethod
    def from_dict(cls, data):
        if 'theta' in data:
            return cls.normalized(data['theta'], data['phi'])
        return cls.angles(data['az'], data['el'])

    def to_dict(self):
        if self.kind == 'normalized':
            return {'theta': str(self.first), 'phi': str(self.second)}
        return {'az': str(self.first), 'el': str(self.second)}

    @property
    def shape(self):
        return (self.first.count, self.second.count)

    @property
    def periodic(self):
        """True when a normalized grid tiles exactly one period per axis."""
        if self.kind != 'normalized':
            return False
        return all(
            abs(r.stop - r.start + r.step - 1.0) < 1e-9
            for r in (self.first, self.second)
        )

    @property
    def min_step(self):
        return min(self.first.step, self.second.step)

    @property
    def column_names(self):
        if self.kind == 'normalized':
            return ('theta_n', 'phi_n')
        return ('az_deg', 'el_deg')

    def mesh(self):
        """Coordinate matrices of shape `self.shape`."""
        return np.meshgrid(self.first.values(), self.second.values(), indexing='ij')

    def nearest(self, point):
        """Grid point closest (per axis) to `point`."""
        out = []
        for r, x in zip((self.first, self.second), point):
            index = int(np.clip(np.round((x - r.start) / r.step), 0, r.count - 1))
            out.append(float(r.values()[index]))
        return tuple(out)


def _as_range(value, field):
    if isinstance(value, AxisRange):
        return value
    if isinstance(value, (tuple, list)):
        return AxisRange(*(float(v) for v in value))
    return AxisRange.parse(value, field=field)
