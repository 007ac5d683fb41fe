import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from lib.errors import ValidationError

logger = logging.getLogger(__name__)

GENERATOR_NAME = 'PCG64'


def normalized_doa(az_deg, el_deg, spacing_over_lambda=0.5, convention='polar'):
    """Map angles in degrees to normalized DOAs (theta', phi').

    convention='polar' is the data-model mapping
        theta' = (d/lambda) sin(az) cos(el), phi' = (d/lambda) sin(az) sin(el)
    convention='broadside' measures both angles from the array normal
        theta' = (d/lambda) cos(el) sin(az), phi' = (d/lambda) sin(el)
    """
    az = np.deg2rad(np.asarray(az_deg, dtype=float))
    el = np.deg2rad(np.asarray(el_deg, dtype=float))
    if convention == 'polar':
        theta = spacing_over_lambda * np.sin(az) * np.cos(el)
        phi = spacing_over_lambda * np.sin(az) * np.sin(el)
    elif convention == 'broadside':
        theta = spacing_over_lambda * np.cos(el) * np.sin(az)
        phi = spacing_over_lambda * np.sin(el)
    else:
        raise ValidationError(f'unknown angle convention {convention!r}', field='convention')
    return theta, phi


def angles_from_normalized(theta_n, phi_n, spacing_over_lambda=0.5):
    """Inverse of the polar mapping, with elevation folded into [-90, 90].

    Returns NaN for points outside the visible disk.
    """
    theta_n = np.asarray(theta_n, dtype=float)
    phi_n = np.asarray(phi_n, dtype=float)
    radius = np.hypot(theta_n, phi_n) / spacing_over_lambda
    visible = radius <= 1 + 1e-12
    az = np.rad2deg(np.arcsin(np.clip(radius, 0, 1)))
    el = np.rad2deg(np.arctan2(phi_n, theta_n))
    # (az, el) and (-az, el -/+ 180) describe the same direction
    flip = np.abs(el) > 90
    az = np.where(flip, -az, az)
    el = np.where(flip, el - np.sign(el) * 180, el)
    az = np.where(visible, az, np.nan)
    el = np.where(visible, el, np.nan)
    return az, el


def steering_matrix(positions, theta_n, phi_n):
    """Columns exp(2 pi j (theta' u + phi' v)) for each direction.

    `positions` is an (n, 2) array in units of d; `theta_n`/`phi_n` are
    1-D arrays of normalized DOAs.
    """
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    theta_n = np.atleast_1d(np.asarray(theta_n, dtype=float))
    phi_n = np.atleast_1d(np.asarray(phi_n, dtype=float))
    phase = np.outer(p[:, 0], theta_n) + np.outer(p[:, 1], phi_n)
    return np.exp(2j * np.pi * phase)


def steering_vector(array, theta_n, phi_n):
    return steering_matrix(array.as_array(), theta_n, phi_n)[:, 0]


@dataclass(frozen=True)
class Source:

    """A far-field source given by angles or directly by normalized DOAs."""

    az_deg: Optional[float] = None
    el_deg: Optional[float] = None
    power: float = 1.0
    theta_n: Optional[float] = None
    phi_n: Optional[float] = None

    def __post_init__(self):
        for name in ('az_deg', 'el_deg', 'power', 'theta_n', 'phi_n'):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, float(value))
        if self.power < 0:
            raise ValidationError(f'source power {self.power} is negative', field='power')
        has_angles = self.az_deg is not None and self.el_deg is not None
        has_normalized = self.theta_n is not None and self.phi_n is not None
        if not (has_angles or has_normalized):
            raise ValidationError('source needs az/el or normalized DOAs', field='sources')

    @classmethod
    def at_normalized(cls, theta_n, phi_n, power=1.0):
        return cls(power=power, theta_n=float(theta_n), phi_n=float(phi_n))

    def normalized(self, spacing_over_lambda=0.5):
        if self.theta_n is not None:
            return self.theta_n, self.phi_n
        theta, phi = normalized_doa(self.az_deg, self.el_deg, spacing_over_lambda)
        return float(theta), float(phi)


@dataclass(frozen=True)
class SourceScene:

    sources: Tuple[Source, ...]
    noise_power: float = 1.0
    snapshots: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'sources', tuple(self.sources))
        if not self.sources:
            raise ValidationError('scene needs at least one source', field='sources')
        if self.noise_power < 0:
            raise ValidationError(
                f'noise power {self.noise_power} is negative', field='noise_power'
            )
        if int(self.snapshots) != self.snapshots or self.snapshots < 1:
            raise ValidationError(
                f'snapshots={self.snapshots} must be a positive integer', field='snapshots'
            )

    @classmethod
    def from_snr(cls, sources, snr_db, snapshots, seed=0):
        """Unit-power sources with noise power 10^(-SNR/10)."""
        return cls(
            sources=tuple(sources),
            noise_power=10 ** (-snr_db / 10),
            snapshots=snapshots,
            seed=seed
        )

    @property
    def powers(self):
        return np.array([s.power for s in self.sources], dtype=float)

    def normalized(self, spacing_over_lambda=0.5):
        """(q, 2) array of normalized DOAs."""
        return np.array(
            [s.normalized(spacing_over_lambda) for s in self.sources], dtype=float
        ).reshape(-1, 2)

    def with_values(self, **changes):
        values = {
            'sources': self.sources,
            'noise_power': self.noise_power,
            'snapshots': self.snapshots,
            'seed': self.seed
        }
        values.update(changes)
        return SourceScene(**values)

    def to_dict(self):
        sources = []
        for s in self.sources:
            if s.theta_n is not None:
                sources.append({'theta_n': s.theta_n, 'phi_n': s.phi_n, 'power': s.power})
            else:
                sources.append({'az_deg': s.az_deg, 'el_deg': s.el_deg, 'power': s.power})
        return {
            'sources': sources,
            'noise_power': self.noise_power,
            'snapshots': self.snapshots,
            'seed': self.seed
        }

    @classmethod
    def from_dict(cls, data):
        try:
            sources = [Source(**s) for s in data['sources']]
            return cls(
                sources=sources,
                noise_power=float(data.get('noise_power', 1.0)),
                snapshots=int(data.get('snapshots', 500)),
                seed=int(data.get('seed', 0))
            )
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError, OverflowError) as e:
            raise ValidationError(f'malformed scene: {e}', field='scene')


@dataclass(frozen=True, eq=False)
class SampleCovariance:

    """Covariance estimate indexed by `sensor_order`.

    snapshots_used is 0 for the exact (analytic) covariance.
    """

    matrix: np.ndarray
    sensor_order: Tuple[Tuple[int, int], ...]
    snapshots_used: int
    seed: Optional[int] = None
    generator: str = field(default=GENERATOR_NAME)

    @property
    def size(self):
        return self.matrix.shape[0]


def _circular_gaussian(rng, shape, variance):
    scale = np.sqrt(variance / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_snapshots(array, scene):
    """Sensors x K snapshot matrix for uncorrelated Gaussian sources in white noise."""
    rng = np.random.default_rng(scene.seed)
    doas = scene.normalized(array.spacing_over_lambda)
    A = steering_matrix(array.as_array(), doas[:, 0], doas[:, 1])
    q, k = len(scene.sources), scene.snapshots

    signals = _circular_gaussian(rng, (q, k), scene.powers[:, None])
    noise = _circular_gaussian(rng, (array.size, k), scene.noise_power)
    logger.debug(
        f'Simulated {k} snapshots of {q} sources on {array.label} '
        f'(seed {scene.seed}, {GENERATOR_NAME})'
    )
    return A @ signals + noise


def sample_covariance(snapshots, sensor_order=None, seed=None):
    Y = np.asarray(snapshots)
    if Y.ndim != 2 or Y.shape[1] == 0:
        raise ValidationError('snapshot set is empty', field='snapshots')
    k = Y.shape[1]
    R = Y @ Y.conj().T / k
    R = (R + R.conj().T) / 2
    if sensor_order is None:
        sensor_order = tuple((i, 0) for i in range(Y.shape[0]))
    return SampleCovariance(
        matrix=R,
        sensor_order=tuple(tuple(p) for p in sensor_order),
        snapshots_used=k,
        seed=seed
    )


def analytic_covariance(array, scene):
    """Exact covariance sum_i p_i a_i a_i^H + noise * I."""
    doas = scene.normalized(array.spacing_over_lambda)
    A = steering_matrix(array.as_array(), doas[:, 0], doas[:, 1])
    R = (A * scene.powers) @ A.conj().T + scene.noise_power * np.eye(array.size)
    R = (R + R.conj().T) / 2
    return SampleCovariance(matrix=R, sensor_order=array.positions, snapshots_used=0)


def simulate_covariance(array, scene):
    """Simulate the scene and return its sample covariance."""
    Y = simulate_snapshots(array, scene)
    return sample_covariance(Y, array.positions, seed=scene.seed)
