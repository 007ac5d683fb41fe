import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Tuple

import numpy as np

from lib.errors import ValidationError

logger = logging.getLogger(__name__)


def _check_coprime(a, b, axis=None, field_name=None):
    g = math.gcd(a, b)
    if g != 1:
        where = f' on {axis}' if axis else ', not coprime'
        raise ValidationError(f'gcd({a},{b})={g}{where}', field=field_name)


@dataclass(frozen=True)
class CoprimePair:

    """Coprime integers (M, N) defining the interleaved subarrays."""

    m: int
    n: int

    def __post_init__(self):
        for name, value in (('m', self.m), ('n', self.n)):
            if int(value) != value or value < 1:
                raise ValidationError(
                    f'{name}={value} must be a positive integer', field=name
                )
        _check_coprime(self.m, self.n, field_name='m')

    @classmethod
    def of(cls, pair):
        if isinstance(pair, CoprimePair):
            return pair
        m, n = pair
        return cls(int(m), int(n))


@dataclass(frozen=True)
class SensorArray:

    """Sensors on the integer lattice, in units of the spacing d.

    Positions are kept sorted lexicographically so that every consumer
    (covariance rows, weight vectors, files) shares a single sensor order.
    """

    positions: Tuple[Tuple[int, int], ...]
    spacing_d: float = 0.5
    wavelength: float = 1.0
    label: str = 'array'
    _lookup: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        points = sorted({(int(u), int(v)) for (u, v) in self.positions})
        if not points:
            raise ValidationError('array has no sensors', field='positions')
        if any(u < 0 or v < 0 for (u, v) in points):
            raise ValidationError(
                'sensor coordinates must be non-negative', field='positions'
            )
        if self.wavelength <= 0 or self.spacing_d <= 0:
            raise ValidationError(
                'spacing and wavelength must be positive', field='spacing_d'
            )
        if self.spacing_d > self.wavelength / 2 * (1 + 1e-12):
            raise ValidationError(
                f'spacing {self.spacing_d} exceeds half a wavelength '
                f'({self.wavelength / 2})',
                field='spacing_d'
            )
        object.__setattr__(self, 'positions', tuple(points))
        object.__setattr__(self, '_lookup', frozenset(points))

    @property
    def size(self):
        return len(self.positions)

    @property
    def spacing_over_lambda(self):
        return self.spacing_d / self.wavelength

    def __len__(self):
        return self.size

    def __contains__(self, point):
        return tuple(point) in self._lookup

    def as_array(self):
        """Positions as an (n, 2) integer array in sensor order."""
        return np.array(self.positions, dtype=np.int64).reshape(-1, 2)

    def physical_positions(self):
        """Positions in meters."""
        return self.as_array() * self.spacing_d

    def relabel(self, label):
        return SensorArray(
            self.positions, self.spacing_d, self.wavelength, label
        )

    def to_dict(self):
        return {
            'label': self.label,
            'spacing_over_lambda': self.spacing_over_lambda,
            'positions': [[u, v] for (u, v) in self.positions]
        }

    @classmethod
    def from_dict(cls, data, wavelength=1.0):
        try:
            positions = [tuple(p) for p in data['positions']]
            ratio = float(data.get('spacing_over_lambda', 0.5))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f'malformed array file: {e}', field='positions')
        for p in positions:
            try:
                integral = len(p) == 2 and all(int(c) == c for c in p)
            except (TypeError, ValueError, OverflowError):
                integral = False
            if not integral:
                raise ValidationError(
                    f'position {list(p)} is not an integer pair',
                    field='positions'
                )
        return cls(
            positions=positions,
            spacing_d=ratio * wavelength,
            wavelength=wavelength,
            label=data.get('label', 'array')
        )


def _make(points, label, spacing_over_lambda, wavelength):
    array = SensorArray(
        positions=tuple(points),
        spacing_d=spacing_over_lambda * wavelength,
        wavelength=wavelength,
        label=label
    )
    logger.debug(f'Built {label} with {array.size} sensors')
    return array


def coprime_set(pair):
    """Normalized 1-D coprime positions {Mn | 1<=n<=N-1} U {Nm | 0<=m<=2M-1}."""
    pair = CoprimePair.of(pair)
    m, n = pair.m, pair.n
    first = {m * i for i in range(1, n)}
    second = {n * j for j in range(0, 2 * m)}
    return sorted(first | second)


def coprime_1d(pair, spacing_over_lambda=0.5, wavelength=1.0):
    pair = CoprimePair.of(pair)
    points = [(u, 0) for u in coprime_set(pair)]
    return _make(
        points, f'coprime1d({pair.m},{pair.n})', spacing_over_lambda, wavelength
    )


def rcpa(pair, spacing_over_lambda=0.5, wavelength=1.0):
    """Rectangular coprime planar array: the 1-D coprime set squared."""
    pair = CoprimePair.of(pair)
    s = coprime_set(pair)
    points = [(u, v) for u in s for v in s]
    return _make(
        points, f'rcpa({pair.m},{pair.n})', spacing_over_lambda, wavelength
    )


def cpa(pair, offset=(0, 0), spacing_over_lambda=0.5, wavelength=1.0):
    """Coprime planar array: an M x M lattice of pitch N and an N x N lattice
    of pitch M. With the default zero offset both share the origin sensor."""
    pair = CoprimePair.of(pair)
    m, n = pair.m, pair.n
    dx, dy = (int(c) for c in offset)
    if dx < 0 or dy < 0:
        raise ValidationError('offset must be non-negative', field='offset')
    sub1 = {(n * i, n * j) for i in range(m) for j in range(m)}
    sub2 = {(m * i + dx, m * j + dy) for i in range(n) for j in range(n)}
    return _make(
        sub1 | sub2, f'cpa({m},{n})', spacing_over_lambda, wavelength
    )


def gcpa(n1, m1, n2, m2, spacing_over_lambda=0.5, wavelength=1.0):
    """Generalized coprime planar array of an N1 x M1 and an N2 x M2 lattice.

    Subarray 1 has pitch (N2, M2) and subarray 2 pitch (N1, M1) in units of
    the base spacing.
    """
    for name, value in (('n1', n1), ('m1', m1), ('n2', n2), ('m2', m2)):
        if int(value) != value or value < 1:
            raise ValidationError(
                f'{name}={value} must be a positive integer', field=name
            )
    _check_coprime(n1, n2, axis='x-axis', field_name='n1')
    _check_coprime(m1, m2, axis='y-axis', field_name='m1')
    sub1 = {(n2 * i, m2 * j) for i in range(n1) for j in range(m1)}
    sub2 = {(n1 * i, m1 * j) for i in range(n2) for j in range(m2)}
    return _make(
        sub1 | sub2, f'gcpa({n1},{m1},{n2},{m2})', spacing_over_lambda, wavelength
    )


def ura(nx, ny, spacing_over_lambda=0.5, wavelength=1.0):
    """Filled nx x ny uniform rectangular array."""
    if nx < 1 or ny < 1:
        raise ValidationError('ura needs at least one sensor per axis', field='nx')
    points = [(u, v) for u in range(nx) for v in range(ny)]
    return _make(points, f'ura({nx},{ny})', spacing_over_lambda, wavelength)


def from_points(points: Iterable, label='custom', spacing_over_lambda=0.5,
                wavelength=1.0):
    return _make(list(points), label, spacing_over_lambda, wavelength)


GENERATORS = {
    'coprime1d': lambda p: coprime_1d((p['m'], p['n']), p.get('spacing_over_lambda', 0.5)),
    'rcpa': lambda p: rcpa((p['m'], p['n']), p.get('spacing_over_lambda', 0.5)),
    'cpa': lambda p: cpa(
        (p['m'], p['n']), p.get('offset', (0, 0)), p.get('spacing_over_lambda', 0.5)
    ),
    'gcpa': lambda p: gcpa(
        p['n1'], p['m1'], p['n2'], p['m2'], p.get('spacing_over_lambda', 0.5)
    ),
    'ura': lambda p: ura(p['nx'], p['ny'], p.get('spacing_over_lambda', 0.5)),
}


def build_array(kind, **params):
    """Build an array of the named kind, e.g. build_array('rcpa', m=2, n=3)."""
    if kind not in GENERATORS:
        raise ValidationError(
            f'unknown array type {kind!r}; choose from {sorted(GENERATORS)}',
            field='type'
        )
    try:
        return GENERATORS[kind](params)
    except KeyError as e:
        raise ValidationError(f'{kind} needs parameter {e.args[0]}', field=e.args[0])
