import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from lib.coarray import contiguous_lags, difference_coarray, pairwise_differences
from lib.errors import NumericalError, ValidationError
from lib.geometry import ura
from lib.signals import (
    analytic_covariance,
    normalized_doa,
    simulate_covariance,
    steering_matrix,
)

logger = logging.getLogger(__name__)

# Grid points evaluated per block in the pseudo-spectrum
CHUNK = 8192


@dataclass(frozen=True, eq=False)
class VirtualCovariance:

    """Covariance of the one-sided (h+1) x (h+1) virtual URA.

    Virtual sensor (i, j) has row index i*(h+1) + j.
    """

    matrix: np.ndarray
    lag_autocorrelation: Dict[Tuple[int, int], complex]
    half_width: int
    method: str = 'augmentation'

    @property
    def side(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class MusicResult:

    grid: object
    spectrum: np.ndarray
    peaks: List[Tuple[float, float, float]]
    eigenvalues: np.ndarray

    def estimates(self):
        return [(a, b) for (a, b, _) in self.peaks]


def lag_average(cov, co, half_width=None):
    """Average the covariance entries sharing each lag of the contiguous square.

    The divisor for lag l is the number of sensor pairs with difference l,
    i.e. the coarray weight. The result is conjugate-symmetric exactly.
    """
    positions = np.array(cov.sensor_order, dtype=np.int64).reshape(-1, 2)
    if len(positions) != co.sensor_count or cov.matrix.shape != (len(positions),) * 2:
        raise ValidationError(
            f'covariance of side {cov.matrix.shape[0]} does not match a coarray of '
            f'{co.sensor_count} sensors',
            field='cov'
        )
    lags = contiguous_lags(co, half_width)
    h = co.contiguous_half_width if half_width is None else int(half_width)

    diffs = pairwise_differences(positions)
    span = int(np.abs(diffs).max())
    width = 2 * span + 1
    index = (diffs[:, 0] + span) * width + (diffs[:, 1] + span)
    r = cov.matrix.reshape(-1)
    sums = (
        np.bincount(index, weights=r.real, minlength=width * width)
        + 1j * np.bincount(index, weights=r.imag, minlength=width * width)
    )
    counts = np.bincount(index, minlength=width * width)

    averaged = {}
    for (lx, ly) in lags:
        k = (lx + span) * width + (ly + span)
        if counts[k] != co.weight((lx, ly)):
            raise ValidationError(
                f'covariance sensor order disagrees with the coarray at lag {(lx, ly)}',
                field='cov'
            )
        averaged[(lx, ly)] = sums[k] / counts[k]
    for (lx, ly) in lags:
        if (lx, ly) < (-lx, -ly):
            value = (averaged[(lx, ly)] + np.conj(averaged[(-lx, -ly)])) / 2
            averaged[(lx, ly)] = value
            averaged[(-lx, -ly)] = np.conj(value)
    averaged[(0, 0)] = complex(averaged[(0, 0)].real, 0.0)
    logger.debug(f'Lag-averaged {len(averaged)} lags (h={h})')
    return averaged


def _lag_matrix(lag_avg, h):
    """(2h+1) x (2h+1) array Z with Z[lx + h, ly + h] = r(lx, ly)."""
    Z = np.empty((2 * h + 1, 2 * h + 1), dtype=complex)
    for lx in range(-h, h + 1):
        for ly in range(-h, h + 1):
            try:
                Z[lx + h, ly + h] = lag_avg[(lx, ly)]
            except KeyError:
                raise ValidationError(f'lag {(lx, ly)} missing from coarray', field='lag')
    return Z


def build_virtual_covariance(lag_avg, h, method='augmentation'):
    """Virtual URA covariance from lag-averaged autocorrelations.

    method='augmentation' fills the doubly block-Toeplitz matrix directly;
    method='smoothing' averages the outer products of every (h+1) x (h+1)
    window of the lag grid, which is positive semidefinite by construction.
    """
    h = int(h)
    if h < 0:
        raise ValidationError(f'half width {h} is negative', field='h')
    Z = _lag_matrix(lag_avg, h)
    n = h + 1
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    ii, jj = ii.reshape(-1), jj.reshape(-1)

    if method == 'augmentation':
        dx = ii[:, None] - ii[None, :]
        dy = jj[:, None] - jj[None, :]
        matrix = Z[dx + h, dy + h]
    elif method == 'smoothing':
        windows = sliding_window_view(Z, (n, n)).reshape(n * n, n * n)
        matrix = windows.T @ windows.conj() / (n * n)
    else:
        raise ValidationError(f'unknown virtual covariance method {method!r}', field='method')

    matrix = (matrix + matrix.conj().T) / 2
    lags = {
        (lx, ly): complex(Z[lx + h, ly + h])
        for lx in range(-h, h + 1) for ly in range(-h, h + 1)
    }
    return VirtualCovariance(matrix=matrix, lag_autocorrelation=lags, half_width=h, method=method)


def _check_hermitian(matrix, tol=1e-10):
    scale = max(1.0, float(np.abs(matrix).max()))
    if np.abs(matrix - matrix.conj().T).max() > tol * scale:
        raise ValidationError('virtual covariance is not Hermitian', field='vc')


def _fix_phase(vectors):
    """Rotate each column so its first non-negligible entry is real positive."""
    out = vectors.copy()
    for k in range(out.shape[1]):
        column = out[:, k]
        nonzero = np.flatnonzero(np.abs(column) > 1e-12)
        if len(nonzero):
            lead = column[nonzero[0]]
            out[:, k] = column * (np.conj(lead) / abs(lead))
    return out


def eigen_split(matrix, q_sources):
    """Eigenvalues in descending order and the noise subspace.

    The noise subspace spans the eigenvectors of the smallest
    (side - q_sources) eigenvalues.
    """
    _check_hermitian(matrix)
    side = matrix.shape[0]
    if not 1 <= q_sources < side:
        raise ValidationError(
            f'q_sources={q_sources} must be in [1, {side - 1}]', field='q_sources'
        )
    values, vectors = scipy.linalg.eigh(matrix)
    values, vectors = values[::-1], vectors[:, ::-1]
    vectors = _fix_phase(vectors)
    return values, vectors[:, q_sources:]


def grid_directions(grid, spacing_over_lambda=0.5):
    """Normalized DOAs of every grid point, each of shape grid.shape."""
    first, second = grid.mesh()
    if grid.kind == 'normalized':
        return first, second
    return normalized_doa(first, second, spacing_over_lambda, convention='polar')


def pseudo_spectrum(noise_subspace, half_width, grid, spacing_over_lambda=0.5):
    """1 / (a^H En En^H a) over the grid for virtual-URA steering vectors."""
    positions = ura(half_width + 1, half_width + 1).as_array()
    theta, phi = grid_directions(grid, spacing_over_lambda)
    theta, phi = theta.reshape(-1), phi.reshape(-1)
    En_h = noise_subspace.conj().T

    denominator = np.empty(theta.shape)
    for start in range(0, len(theta), CHUNK):
        stop = start + CHUNK
        A = steering_matrix(positions, theta[start:stop], phi[start:stop])
        projection = En_h @ A
        denominator[start:stop] = np.sum(np.abs(projection) ** 2, axis=0)
    spectrum = 1.0 / np.maximum(denominator, np.finfo(float).tiny)
    return spectrum.reshape(grid.shape)


def find_peaks_2d(values, periodic=False):
    """Local maxima over the 8-neighbourhood, sorted by value descending.

    Among equal adjacent values only the lexicographically smallest grid
    index survives. Returns a list of (i, j) index pairs.
    """
    earlier = np.array([[1, 1, 1], [1, 0, 0], [0, 0, 0]], dtype=bool)
    later = earlier[::-1, ::-1]
    mode = 'wrap' if periodic else 'constant'
    max_earlier = ndimage.maximum_filter(values, footprint=earlier, mode=mode, cval=-np.inf)
    max_later = ndimage.maximum_filter(values, footprint=later, mode=mode, cval=-np.inf)
    mask = (values > max_earlier) & (values >= max_later)
    indices = np.argwhere(mask)
    order = np.argsort(-values[mask], kind='stable')
    return [tuple(int(k) for k in indices[i]) for i in order]


def _wrap_half(x):
    return (x + 0.5) % 1.0 - 0.5


def refine_peaks(noise_subspace, half_width, grid, peaks, spacing_over_lambda=0.5):
    """Move each grid peak to the minimum of a^H En En^H a within one grid step.

    Peaks keep their grid position when the local search does not improve
    on it. Normalized periodic grids wrap the result back into [-0.5, 0.5).
    """
    positions = ura(half_width + 1, half_width + 1).as_array()
    En_h = noise_subspace.conj().T
    ranges = (grid.first, grid.second)

    def null_value(point):
        if grid.kind == 'normalized':
            theta, phi = point
        else:
            theta, phi = normalized_doa(point[0], point[1], spacing_over_lambda, convention='polar')
        a = steering_matrix(positions, [theta], [phi])
        return float(np.sum(np.abs(En_h @ a) ** 2))

    refined = []
    for (x, y, height) in peaks:
        bounds = [(c - r.step, c + r.step) for c, r in zip((x, y), ranges)]
        if not grid.periodic:
            bounds = [(max(lo, r.start), min(hi, r.stop)) for (lo, hi), r in zip(bounds, ranges)]
        start = null_value((x, y))
        result = scipy.optimize.minimize(
            null_value, x0=[x, y], method='L-BFGS-B', bounds=bounds,
            options={'ftol': 1e-15, 'gtol': 1e-12}
        )
        if not result.fun < start:
            refined.append((x, y, height))
            continue
        bx, by = (float(c) for c in result.x)
        if grid.periodic:
            bx, by = _wrap_half(bx), _wrap_half(by)
        refined.append((bx, by, 1.0 / max(float(result.fun), np.finfo(float).tiny)))
    logger.debug(f'Refined {len(refined)} peaks off the grid')
    return refined


def music_spectrum(vc, q_sources, grid, spacing_over_lambda=0.5, refine=False):
    """MUSIC pseudo-spectrum and its q largest peaks.

    With refine=True each peak is polished off the grid by refine_peaks.
    """
    values, En = eigen_split(vc.matrix, q_sources)
    spectrum = pseudo_spectrum(En, vc.half_width, grid, spacing_over_lambda)
    logger.debug(
        f'MUSIC split: signal eigenvalue {values[q_sources - 1]:.4g}, '
        f'largest noise eigenvalue {values[q_sources]:.4g}'
    )

    first, second = grid.first.values(), grid.second.values()
    peaks = [
        (float(first[i]), float(second[j]), float(spectrum[i, j]))
        for (i, j) in find_peaks_2d(spectrum, periodic=grid.periodic)[:q_sources]
    ]
    if refine:
        peaks = refine_peaks(En, vc.half_width, grid, peaks, spacing_over_lambda)
    return MusicResult(grid=grid, spectrum=spectrum, peaks=peaks, eigenvalues=values)


class CoarrayMusic:

    """Coarray-augmented 2-D MUSIC for a fixed array and search grid."""

    def __init__(self, array, grid, method='augmentation', refine=False):
        self.array = array
        self.grid = grid
        self.method = method
        self.refine = refine
        self.coarray = difference_coarray(array)
        self.half_width = self.coarray.contiguous_half_width

    @property
    def max_sources(self):
        return self.coarray.music_dof

    def check_sources(self, q_sources):
        if q_sources < 1:
            raise ValidationError(f'q_sources={q_sources} must be positive', field='q_sources')
        if q_sources > self.max_sources:
            raise ValidationError(
                f'q_sources={q_sources} exceeds coarray DOF bound {self.max_sources}',
                field='q_sources'
            )

    def virtual_covariance(self, cov):
        lag_avg = lag_average(cov, self.coarray)
        return build_virtual_covariance(lag_avg, self.half_width, self.method)

    def __call__(self, cov, q_sources):
        self.check_sources(q_sources)
        vc = self.virtual_covariance(cov)
        result = music_spectrum(
            vc, q_sources, self.grid, self.array.spacing_over_lambda, refine=self.refine
        )
        if len(result.peaks) < q_sources:
            raise NumericalError(
                f'found {len(result.peaks)} peaks, need {q_sources}', field='q_sources'
            )
        return result


def estimate_doa(array, scene, q_sources, grid, method='augmentation', exact=False,
                 refine=False):
    """Simulate the scene on the array and return q paired estimates.

    With exact=True the analytic covariance replaces the sample covariance.
    """
    music = CoarrayMusic(array, grid, method, refine=refine)
    music.check_sources(q_sources)
    if exact:
        cov = analytic_covariance(array, scene)
    else:
        cov = simulate_covariance(array, scene)
    return music(cov, q_sources).estimates()
