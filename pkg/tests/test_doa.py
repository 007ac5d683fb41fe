"""
Unit tests for lib.doa.
"""

import numpy as np
import pytest

import lib.array_configs as array_configs
from lib.coarray import difference_coarray
from lib.doa import (
    CoarrayMusic,
    build_virtual_covariance,
    eigen_split,
    estimate_doa,
    find_peaks_2d,
    lag_average,
)
from lib.errors import NumericalError, ValidationError
from lib.geometry import cpa, rcpa
from lib.grids import SearchGrid
from lib.montecarlo import match_estimates
from lib.signals import Source, SourceScene, analytic_covariance


@pytest.fixture(scope='module')
def array():
    return rcpa((2, 3))


@pytest.fixture(scope='module')
def exact_scene():
    return SourceScene(
        [Source.at_normalized(0.1, 0.2), Source.at_normalized(-0.3, 0.05),
         Source.at_normalized(0.25, -0.35)],
        noise_power=0.1,
        snapshots=500
    )


def exact_lag(scene, lag):
    doas = scene.normalized()
    value = np.sum(scene.powers * np.exp(2j * np.pi * (doas[:, 0] * lag[0] + doas[:, 1] * lag[1])))
    return value + (scene.noise_power if lag == (0, 0) else 0.0)


class TestVirtualCovariance:
    """Lag averaging and the virtual URA covariance."""

    def test_lag_average_of_exact_covariance(self, array, exact_scene):
        co = difference_coarray(array)
        averaged = lag_average(analytic_covariance(array, exact_scene), co)
        assert len(averaged) == 225
        for lag in [(0, 0), (1, 0), (-3, 7), (7, -7), (5, 2)]:
            assert averaged[lag] == pytest.approx(exact_lag(exact_scene, lag), abs=1e-10)

    def test_lag_average_conjugate_symmetric(self, array, exact_scene):
        co = difference_coarray(array)
        averaged = lag_average(analytic_covariance(array, exact_scene), co)
        for (lx, ly), value in averaged.items():
            assert averaged[(-lx, -ly)] == np.conj(value)

    def test_dimensions_and_toeplitz(self, array, exact_scene):
        music = CoarrayMusic(array, SearchGrid.from_dict(array_configs.SWEEP_GRID))
        vc = music.virtual_covariance(analytic_covariance(array, exact_scene))
        assert vc.matrix.shape == (64, 64)
        assert np.abs(vc.matrix - vc.matrix.conj().T).max() <= 1e-10

        n = vc.half_width + 1
        for r in range(vc.side):
            for c in range(vc.side):
                lag = (r // n - c // n, r % n - c % n)
                assert vc.matrix[r, c] == vc.lag_autocorrelation[lag]

    def test_smoothing_is_positive_semidefinite(self, array, exact_scene):
        co = difference_coarray(array)
        averaged = lag_average(analytic_covariance(array, exact_scene), co)
        vc = build_virtual_covariance(averaged, co.contiguous_half_width, method='smoothing')
        assert vc.matrix.shape == (64, 64)
        assert np.linalg.eigvalsh(vc.matrix).min() >= -1e-10

    def test_unknown_method(self, array, exact_scene):
        co = difference_coarray(array)
        averaged = lag_average(analytic_covariance(array, exact_scene), co)
        with pytest.raises(ValidationError, match='unknown virtual covariance method'):
            build_virtual_covariance(averaged, 7, method='spatial')

    def test_half_width_beyond_contiguous_range(self, array, exact_scene):
        co = difference_coarray(array)
        with pytest.raises(ValidationError, match='missing from coarray'):
            lag_average(analytic_covariance(array, exact_scene), co, half_width=8)

    def test_covariance_of_other_array_rejected(self, array, exact_scene):
        cov = analytic_covariance(cpa((3, 4)), exact_scene)
        with pytest.raises(ValidationError):
            lag_average(cov, difference_coarray(array))


class TestEigenSplit:
    """Eigendecomposition of the virtual covariance."""

    def test_descending_and_subspace_size(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
        R = X @ X.conj().T
        values, En = eigen_split(R, 2)
        assert np.all(np.diff(values) <= 0)
        assert En.shape == (6, 4)
        np.testing.assert_allclose(En.conj().T @ En, np.eye(4), atol=1e-10)

    def test_non_hermitian_rejected(self):
        with pytest.raises(ValidationError, match='not Hermitian'):
            eigen_split(np.array([[1.0, 2.0], [0.0, 1.0]], dtype=complex), 1)

    def test_source_count_range(self):
        with pytest.raises(ValidationError):
            eigen_split(np.eye(4, dtype=complex), 4)


class TestPeaks:
    """find_peaks_2d on hand-built surfaces."""

    def test_plateau_keeps_first_point(self):
        values = np.array([[0.0, 1.0, 1.0, 0.0]])
        assert find_peaks_2d(values) == [(0, 1)]

    def test_sorted_by_value(self):
        values = np.zeros((5, 5))
        values[1, 1] = 2.0
        values[3, 3] = 5.0
        assert find_peaks_2d(values) == [(3, 3), (1, 1)]

    def test_periodic_wrap(self):
        values = np.zeros((4, 4))
        values[0, 0] = 3.0
        values[3, 3] = 2.0
        assert find_peaks_2d(values, periodic=False) == [(0, 0), (3, 3)]
        assert find_peaks_2d(values, periodic=True) == [(0, 0)]


class TestCoarrayMusic:
    """End-to-end coarray MUSIC."""

    def test_exact_covariance_normalized_grid(self, array, exact_scene):
        grid = SearchGrid.from_dict(array_configs.SWEEP_GRID)
        result = CoarrayMusic(array, grid)(analytic_covariance(array, exact_scene), 3)
        est, truth = match_estimates(result.estimates(), exact_scene.normalized(), period=1.0)
        np.testing.assert_allclose(est, truth, atol=1e-9)
        assert result.spectrum.shape == grid.shape
        assert len(result.eigenvalues) == 64

    def test_exact_covariance_angle_grid(self, array):
        truth = [(30.0, 20.0), (40.0, -30.0), (-35.0, 60.0)]
        scene = SourceScene([Source(az, el) for az, el in truth], noise_power=0.1)
        grid = SearchGrid.angles('-50:50:0.5', '-85:85:0.5')
        est = estimate_doa(array, scene, 3, grid, exact=True)
        est, tru = match_estimates(est, truth)
        np.testing.assert_allclose(est, tru, atol=1e-9)

    def test_seeded_simulation_within_one_step(self, array):
        truth = [(30.0, 20.0), (40.0, -30.0), (-35.0, 60.0)]
        scene = SourceScene.from_snr(
            [Source(az, el) for az, el in truth], snr_db=10, snapshots=500, seed=1
        )
        grid = SearchGrid.angles('-50:50:0.5', '-85:85:0.5')
        est, tru = match_estimates(estimate_doa(array, scene, 3, grid), truth)
        assert np.abs(est - tru).max() <= 0.5 + 1e-9

    def test_dof_bound(self, array):
        music = CoarrayMusic(array, SearchGrid.from_dict(array_configs.SWEEP_GRID))
        assert music.max_sources == 63
        music.check_sources(63)
        with pytest.raises(ValidationError, match='q_sources=64 exceeds coarray DOF bound 63'):
            music.check_sources(64)

    def test_too_few_peaks(self, array, exact_scene):
        grid = SearchGrid.normalized('0:0.01:0.01', '0:0.01:0.01')
        music = CoarrayMusic(array, grid)
        with pytest.raises(NumericalError, match='found 1 peaks, need 3'):
            music(analytic_covariance(array, exact_scene), 3)

    @pytest.mark.slow
    def test_three_source_scene_success_rate(self, array):
        truth = [(30.0, 20.0), (40.0, -30.0), (-35.0, 60.0)]
        grid = SearchGrid.from_dict(array_configs.MUSIC_GRID)
        hits = 0
        for seed in range(20):
            scene = SourceScene.from_snr(
                [Source(az, el) for az, el in truth], snr_db=10, snapshots=500, seed=seed
            )
            est, tru = match_estimates(estimate_doa(array, scene, 3, grid), truth)
            hits += np.abs(est - tru).max() <= 0.5 + 1e-9
        assert hits >= 19


class TestPeakRefinement:
    """Local search around the grid peaks."""

    @pytest.fixture(scope='class')
    def off_grid_scene(self):
        points = [(0.1234, 0.2071), (-0.3117, 0.0537), (0.2549, -0.3462), (-0.4986, 0.3008)]
        return SourceScene(
            [Source.at_normalized(x, y) for x, y in points], noise_power=0.1, snapshots=500
        )

    @staticmethod
    def wrapped_error(estimates, truth):
        est, tru = match_estimates(estimates, truth, period=1.0)
        return np.abs((est - tru + 0.5) % 1.0 - 0.5).max()

    def test_off_grid_sources_recovered(self, array, off_grid_scene):
        grid = SearchGrid.from_dict(array_configs.SWEEP_GRID)
        est = estimate_doa(array, off_grid_scene, 4, grid, exact=True, refine=True)
        assert self.wrapped_error(est, off_grid_scene.normalized()) < 1e-5
        assert all(-0.5 <= x < 0.5 and -0.5 <= y < 0.5 for x, y in est)

    def test_grid_estimates_without_refinement(self, array, off_grid_scene):
        grid = SearchGrid.from_dict(array_configs.SWEEP_GRID)
        est = estimate_doa(array, off_grid_scene, 4, grid, exact=True)
        values = set(grid.first.values())
        assert all(x in values and y in values for x, y in est)
        assert self.wrapped_error(est, off_grid_scene.normalized()) > 1e-3

    def test_on_grid_sources_stay_put(self, array, exact_scene):
        grid = SearchGrid.from_dict(array_configs.SWEEP_GRID)
        result = CoarrayMusic(array, grid, refine=True)(analytic_covariance(array, exact_scene), 3)
        assert self.wrapped_error(result.estimates(), exact_scene.normalized()) < 1e-9

    def test_angle_grid_refinement(self, array):
        truth = [(30.3, 20.6), (40.45, -30.2), (-35.7, 60.35)]
        scene = SourceScene([Source(az, el) for az, el in truth], noise_power=0.1)
        grid = SearchGrid.angles('-50:50:1', '-80:80:1')
        est = estimate_doa(array, scene, 3, grid, exact=True, refine=True)
        est, tru = match_estimates(est, truth)
        np.testing.assert_allclose(est, tru, atol=1e-3)
