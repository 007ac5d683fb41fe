import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from tqdm.contrib.concurrent import thread_map
from tqdm.contrib.logging import logging_redirect_tqdm

import lib.array_configs as array_configs
from lib.doa import CoarrayMusic
from lib.errors import RcpaError, ValidationError
from lib.geometry import build_array
from lib.grids import SearchGrid
from lib.signals import (
    GENERATOR_NAME,
    Source,
    SourceScene,
    angles_from_normalized,
    normalized_doa,
    simulate_covariance,
)

logger = logging.getLogger(__name__)

VARIABLES = ('snr_db', 'snapshots')

PLACEMENTS = ('uniform', 'stratified')

# Uniform placement gives up after this many rejected draws in one trial
MAX_REDRAWS = 100000

# Stratified sources sit at least this fraction of 1/(h+1) apart, where h
# is the contiguous half-width of the virtual URA
RESOLUTION_FRACTION = 0.8

REPORT_COLUMNS = [
    'array_label',
    'swept_variable',
    'value',
    'rmse_normalized',
    'rmse_degrees',
    'trials_used',
    'trials_excluded'
]


@dataclass(frozen=True)
class SweepSpec:

    """RMSE sweep over SNR or snapshot count.

    The scene template is `num_sources` unit-power sources placed in the
    normalized DOA box once per trial, with `snr_db` and `snapshots` fixed
    except for the swept one. `placement` picks uniform rejection draws or
    one source per cell of a shuffled square lattice; `min_separation`
    overrides the placement's default floor. `refine` polishes the MUSIC
    peaks off the search grid.
    """

    variable: str
    values: Tuple[float, ...]
    trials: int = 20
    num_sources: int = 49
    snr_db: float = 0.0
    snapshots: int = 500
    arrays: Tuple[str, ...] = ('rcpa', 'cpa', 'gcpa')
    grid: SearchGrid = field(default_factory=lambda: SearchGrid.from_dict(array_configs.SWEEP_GRID))
    method: str = 'augmentation'
    placement: str = 'uniform'
    min_separation: Optional[float] = None
    refine: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'values', tuple(self.values))
        object.__setattr__(self, 'arrays', tuple(self.arrays))
        if self.variable not in VARIABLES:
            raise ValidationError(
                f'swept variable must be one of {VARIABLES}, got {self.variable!r}',
                field='variable'
            )
        if not self.values:
            raise ValidationError('sweep needs at least one value', field='values')
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValidationError('sweep values must be strictly increasing', field='values')
        if self.trials < 1:
            raise ValidationError(f'trials={self.trials} must be at least 1', field='trials')
        if self.num_sources < 1:
            raise ValidationError('num_sources must be at least 1', field='num_sources')
        if not self.arrays:
            raise ValidationError('sweep needs at least one array', field='arrays')
        if self.placement not in PLACEMENTS:
            raise ValidationError(
                f'placement must be one of {PLACEMENTS}, got {self.placement!r}',
                field='placement'
            )
        if self.min_separation is not None and not self.min_separation > 0:
            raise ValidationError(
                f'min_separation={self.min_separation} must be positive', field='min_separation'
            )

    def scene_values(self, value):
        """(snr_db, snapshots) for one swept value."""
        if self.variable == 'snr_db':
            return float(value), int(self.snapshots)
        return float(self.snr_db), int(value)

    def to_dict(self):
        return {
            'variable': self.variable,
            'values': list(self.values),
            'trials': self.trials,
            'num_sources': self.num_sources,
            'snr_db': self.snr_db,
            'snapshots': self.snapshots,
            'arrays': list(self.arrays),
            'grid': self.grid.to_dict(),
            'method': self.method,
            'placement': self.placement,
            'min_separation': self.min_separation,
            'refine': self.refine
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        try:
            if 'grid' in data:
                data['grid'] = SearchGrid.from_dict(data['grid'])
            return cls(**data)
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f'malformed sweep spec: {e}', field='spec')


@dataclass(frozen=True, eq=False)
class RmseReport:

    table: pd.DataFrame
    metadata: Dict

    def row(self, array_label, value):
        rows = self.table[
            (self.table['array_label'] == array_label) & (self.table['value'] == value)
        ]
        return rows.iloc[0]

    def to_csv(self, path):
        self.table.to_csv(path, index=False, float_format='%.17g')


def _wrap(delta, period):
    if period is None:
        return delta
    return (delta + period / 2) % period - period / 2


def match_estimates(estimates, truth, period=None):
    """Pair each estimate with one truth angle, minimizing summed squared error.

    Returns (estimates, truth) reordered so that row k of each is a matched
    pair. The matching is a permutation.
    """
    est = np.asarray(estimates, dtype=float).reshape(-1, 2)
    tru = np.asarray(truth, dtype=float).reshape(-1, 2)
    delta = _wrap(est[:, None, :] - tru[None, :, :], period)
    cost = np.sum(delta ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost)
    return est[rows], tru[cols]


def _squared_errors(estimates, truth, period=None):
    est, tru = match_estimates(estimates, truth, period)
    return np.sum(_wrap(est - tru, period) ** 2, axis=1)


def rmse(estimates, truth, period=None):
    """Root mean squared 2-D error over L trials of Q estimates each.

    `estimates` is a list of per-trial estimate lists; `truth` is either one
    list of Q angle pairs shared by all trials or a per-trial list. With
    `period` set, coordinate differences wrap to [-period/2, period/2).
    """
    trials = [np.asarray(e, dtype=float).reshape(-1, 2) for e in estimates]
    if not trials:
        raise ValidationError('no trials to score', field='estimates')
    truth = np.asarray(truth, dtype=float)
    per_trial = truth.ndim == 3
    q = truth.shape[1] if per_trial else len(truth)

    total = 0.0
    for i, est in enumerate(trials):
        if len(est) != q:
            raise ValidationError(
                f'trial {i} has {len(est)} estimates, expected {q}', field='estimates'
            )
        total += float(np.sum(_squared_errors(est, truth[i] if per_trial else truth, period)))
    return float(np.sqrt(total / (len(trials) * q)))


def rmse_degrees(estimates, truth, spacing_over_lambda=0.5, period=1.0):
    """Angle-space RMSE (degrees) of normalized estimates matched to truth.

    Pairs with either point outside the visible region are skipped; NaN when
    no pair remains.
    """
    total, count = 0.0, 0
    for est, tru in zip(estimates, truth):
        est_m, tru_m = match_estimates(est, tru, period)
        az_e, el_e = angles_from_normalized(est_m[:, 0], est_m[:, 1], spacing_over_lambda)
        az_t, el_t = angles_from_normalized(tru_m[:, 0], tru_m[:, 1], spacing_over_lambda)
        err = (az_e - az_t) ** 2 + (el_e - el_t) ** 2
        ok = np.isfinite(err)
        total += float(np.sum(err[ok]))
        count += int(np.sum(ok))
    if count == 0:
        return float('nan')
    return float(np.sqrt(total / count))


def draw_sources(rng, num_sources, min_separation, period=1.0):
    """Uniform draws from [-0.5, 0.5)^2, redrawing any source that lands
    within `min_separation` of an earlier one. Returns (points, redraws)."""
    points = []
    redraws = 0
    while len(points) < num_sources:
        candidate = rng.uniform(-0.5, 0.5, size=2)
        if points:
            delta = _wrap(np.asarray(points) - candidate, period)
            if np.min(np.hypot(delta[:, 0], delta[:, 1])) < min_separation:
                redraws += 1
                if redraws > MAX_REDRAWS:
                    raise ValidationError(
                        f'could not place {num_sources} sources {min_separation:g} apart '
                        f'after {MAX_REDRAWS} redraws',
                        field='min_separation'
                    )
                continue
        points.append(candidate)
    return np.array(points), redraws


def draw_stratified(rng, num_sources, min_separation, period=1.0):
    """One source per cell of a randomly shifted g x g lattice, g = ceil(sqrt(Q)).

    Cells are picked by a random permutation and each source keeps
    `min_separation / 2` from its cell edges, so any two sources differ by
    at least `min_separation` along some axis (wrapped).
    """
    cells = int(np.ceil(np.sqrt(num_sources)))
    size = period / cells
    if not min_separation < size:
        raise ValidationError(
            f'min_separation={min_separation:g} does not fit {num_sources} sources '
            f'in cells of width {size:g}',
            field='min_separation'
        )
    chosen = rng.permutation(cells * cells)[:num_sources]
    offset = rng.uniform(0.0, size, size=2)
    corners = np.column_stack([chosen // cells, chosen % cells]) * size - period / 2 + offset
    margin = min_separation / 2
    points = corners + rng.uniform(margin, size - margin, size=(num_sources, 2))
    return _wrap(points, period)


def resolve_arrays(labels):
    arrays = []
    for label in labels:
        if label not in array_configs.ARRAYS:
            raise ValidationError(
                f'unknown array preset {label!r}; choose from {sorted(array_configs.ARRAYS)}',
                field='arrays'
            )
        preset = dict(array_configs.ARRAYS[label])
        arrays.append(build_array(preset.pop('type'), **preset).relabel(label))
    return arrays


class SweepRunner:

    """Runs the trials of a SweepSpec under one master seed.

    Trial t draws its sources once from the generator seeded with [seed, t],
    and every swept value and array sees those sources. Array a simulates
    with its own stream [seed, t, a + 1], which is the same at every swept
    value, so neighbouring values differ only in the swept parameter.
    """

    def __init__(self, spec, seed=0, threads=1, arrays=None):
        self.spec = spec
        self.seed = int(seed)
        self.threads = max(1, int(threads))
        self.arrays = arrays if arrays is not None else resolve_arrays(spec.arrays)
        self.estimators = [
            CoarrayMusic(a, spec.grid, spec.method, refine=spec.refine) for a in self.arrays
        ]
        # normalized DOAs repeat with period 1 for unit lattice spacing
        self.period = 1.0
        self.min_separation = (
            spec.min_separation if spec.min_separation is not None else self.default_separation()
        )
        self.redraws = 0

    def default_separation(self):
        """Two grid steps for uniform draws; for stratified draws a fraction
        of the resolution cell of the smallest virtual URA among the arrays
        that can hold the sources."""
        if self.spec.placement == 'uniform':
            step = self.spec.grid.min_step
            if self.spec.grid.kind == 'angles':
                step = np.deg2rad(step) * 0.5
            return 2 * step
        capable = [e for e in self.estimators if e.max_sources >= self.spec.num_sources]
        h = min(e.half_width for e in (capable or self.estimators))
        return RESOLUTION_FRACTION / (h + 1)

    def draw_truth(self):
        truth = {}
        for t in range(self.spec.trials):
            rng = np.random.default_rng([self.seed, t])
            if self.spec.placement == 'stratified':
                truth[t] = draw_stratified(rng, self.spec.num_sources, self.min_separation)
                continue
            points, redraws = draw_sources(rng, self.spec.num_sources, self.min_separation)
            self.redraws += redraws
            truth[t] = points
        logger.info(
            f'Placed sources for {len(truth)} trials ({self.spec.placement}, '
            f'{self.redraws} redraws)'
        )
        return truth

    def _trial_seed(self, t, a):
        return int(np.random.SeedSequence([self.seed, t, a + 1]).generate_state(1)[0])

    def run_trial(self, task, truth):
        a, v, t = task
        snr_db, snapshots = self.spec.scene_values(self.spec.values[v])
        scene = SourceScene.from_snr(
            [Source.at_normalized(x, y) for (x, y) in truth[t]],
            snr_db=snr_db,
            snapshots=snapshots,
            seed=self._trial_seed(t, a)
        )
        music = self.estimators[a]
        try:
            music.check_sources(self.spec.num_sources)
            cov = simulate_covariance(self.arrays[a], scene)
            estimates = np.array(music(cov, self.spec.num_sources).estimates())
        except RcpaError as e:
            return None, e.message
        if self.spec.grid.kind == 'angles':
            theta, phi = normalized_doa(
                estimates[:, 0], estimates[:, 1], self.arrays[a].spacing_over_lambda
            )
            estimates = np.column_stack([theta, phi])
        return [tuple(e) for e in estimates], None

    def __call__(self):
        spec = self.spec
        truth = self.draw_truth()
        tasks = [
            (a, v, t)
            for a in range(len(self.arrays))
            for v in range(len(spec.values))
            for t in range(spec.trials)
        ]
        with logging_redirect_tqdm():
            outcomes = thread_map(
                lambda task: self.run_trial(task, truth),
                tasks,
                max_workers=self.threads,
                desc=f'{spec.variable} sweep',
                leave=False
            )

        results = dict(zip(tasks, outcomes))
        rows = []
        for a, array in enumerate(self.arrays):
            for v, value in enumerate(spec.values):
                estimates, truths, failures = [], [], []
                for t in range(spec.trials):
                    est, error = results[(a, v, t)]
                    if est is None:
                        failures.append(error)
                        continue
                    estimates.append(est)
                    truths.append(truth[t])
                if failures:
                    logger.warning(
                        f'{array.label} at {spec.variable}={value}: excluded '
                        f'{len(failures)} trial(s), first reason: {failures[0]}'
                    )
                if estimates:
                    rmse_n = rmse(estimates, np.array(truths), self.period)
                    rmse_d = rmse_degrees(estimates, truths, array.spacing_over_lambda)
                else:
                    rmse_n, rmse_d = float('nan'), float('nan')
                rows.append({
                    'array_label': array.label,
                    'swept_variable': spec.variable,
                    'value': value,
                    'rmse_normalized': rmse_n,
                    'rmse_degrees': rmse_d,
                    'trials_used': len(estimates),
                    'trials_excluded': len(failures)
                })
                logger.info(
                    f'{array.label} {spec.variable}={value}: RMSE {rmse_n:.3e} '
                    f'({len(estimates)} trials)'
                )

        metadata = {
            'seed': self.seed,
            'generator': GENERATOR_NAME,
            'grid': spec.grid.to_dict(),
            'scene': {
                'num_sources': spec.num_sources,
                'snr_db': spec.snr_db,
                'snapshots': spec.snapshots,
                'source_box': [-0.5, 0.5],
                'placement': spec.placement,
                'min_separation': self.min_separation
            },
            'refine': spec.refine,
            'redraws': self.redraws
        }
        return RmseReport(table=pd.DataFrame(rows, columns=REPORT_COLUMNS), metadata=metadata)


def run_sweep(spec, seed=0, threads=1, arrays=None):
    return SweepRunner(spec, seed=seed, threads=threads, arrays=arrays)()
