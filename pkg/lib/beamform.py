import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import cvxpy as cp
import numpy as np
import scipy.linalg

import lib.array_configs as array_configs
from lib.coarray import pairwise_differences
from lib.errors import InfeasibleError, NumericalError, ValidationError
from lib.grids import SearchGrid
from lib.signals import normalized_doa, steering_matrix

logger = logging.getLogger(__name__)

MAX_ITERS = 200
SIDELOBE_TOL_DB = 1e-6

SOLVER_OPTIONS = {
    'CLARABEL': {
        'max_iter': MAX_ITERS,
        'tol_gap_abs': 1e-10,
        'tol_gap_rel': 1e-10,
        'tol_feas': 1e-10
    },
    'ECOS': {
        'max_iters': MAX_ITERS,
        'abstol': 1e-10,
        'reltol': 1e-10,
        'feastol': 1e-10
    }
}


@dataclass(frozen=True)
class PatternSpec:

    """Pattern requirements, angles in degrees measured from broadside.

    Interferences are (az, el, suppression_db) with negative dB levels
    relative to the main lobe. Both boxes are centered on the look
    direction: sidelobe bounds apply at the grid points inside the sidelobe
    box and outside the main-lobe box. A sidelobe box of None covers the
    whole grid.
    """

    look: Tuple[float, float] = (0.0, 0.0)
    interferences: Tuple[Tuple[float, float, float], ...] = ()
    sidelobe_db: Optional[float] = None
    mainlobe_half_width: Tuple[float, float] = (12.0, 12.0)
    sidelobe_half_width: Optional[Tuple[float, float]] = None
    grid: Optional[SearchGrid] = None
    noise_model: str = 'isotropic'

    def __post_init__(self):
        object.__setattr__(self, 'look', tuple(float(v) for v in self.look))
        object.__setattr__(
            self, 'interferences', tuple(tuple(float(v) for v in i) for i in self.interferences)
        )
        object.__setattr__(
            self, 'mainlobe_half_width', tuple(float(v) for v in self.mainlobe_half_width)
        )
        if self.sidelobe_half_width is not None:
            object.__setattr__(
                self, 'sidelobe_half_width', tuple(float(v) for v in self.sidelobe_half_width)
            )
            if any(s <= m for s, m in zip(self.sidelobe_half_width, self.mainlobe_half_width)):
                raise ValidationError(
                    f'sidelobe box {self.sidelobe_half_width} must be wider than the '
                    f'main-lobe box {self.mainlobe_half_width}',
                    field='sidelobe_half_width'
                )
        if self.noise_model not in ('isotropic', 'identity'):
            raise ValidationError(
                f'noise model must be isotropic or identity, got {self.noise_model!r}',
                field='noise_model'
            )
        if self.sidelobe_db is not None and self.sidelobe_db >= 0:
            raise ValidationError(
                f'sidelobe level {self.sidelobe_db} dB must be negative', field='sidelobe_db'
            )
        if self.sidelobe_db is not None and self.grid is None:
            raise ValidationError('a sidelobe level needs an evaluation grid', field='grid')
        if self.grid is not None and self.grid.kind != 'angles':
            raise ValidationError('pattern grids are angular', field='grid')
        for (az, el, level) in self.interferences:
            if level >= 0:
                raise ValidationError(
                    f'suppression {level} dB must be negative', field='interferences'
                )
            if self.in_mainlobe(az, el):
                raise ValidationError(
                    f'interference at ({az}, {el}) lies inside the main-lobe box',
                    field='interferences'
                )

    def _in_box(self, az, el, half_width):
        half_az, half_el = half_width
        return (np.abs(np.asarray(az) - self.look[0]) <= half_az) & (
            np.abs(np.asarray(el) - self.look[1]) <= half_el
        )

    def in_mainlobe(self, az, el):
        return self._in_box(az, el, self.mainlobe_half_width)

    def in_sidelobe_region(self, az, el):
        inside = ~self.in_mainlobe(az, el)
        if self.sidelobe_half_width is not None:
            inside &= self._in_box(az, el, self.sidelobe_half_width)
        return inside

    def sidelobe_points(self):
        """(az, el) arrays of the constrained grid points, row-major."""
        if self.grid is None or self.sidelobe_db is None:
            return np.empty(0), np.empty(0)
        az, el = self.grid.mesh()
        az, el = az.reshape(-1), el.reshape(-1)
        keep = self.in_sidelobe_region(az, el)
        return az[keep], el[keep]

    def to_dict(self):
        def box(half_width):
            if half_width is None:
                return None
            return {'az_deg': half_width[0], 'el_deg': half_width[1]}

        return {
            'look': {'az_deg': self.look[0], 'el_deg': self.look[1]},
            'interferences': [
                {'az_deg': az, 'el_deg': el, 'suppression_db': level}
                for (az, el, level) in self.interferences
            ],
            'sidelobe_db': self.sidelobe_db,
            'mainlobe_half_width': box(self.mainlobe_half_width),
            'sidelobe_half_width': box(self.sidelobe_half_width),
            'grid': self.grid.to_dict() if self.grid is not None else None,
            'noise_model': self.noise_model
        }

    @classmethod
    def from_dict(cls, data):
        try:
            look = data.get('look', {'az_deg': 0.0, 'el_deg': 0.0})
            width = data.get('mainlobe_half_width') or {'az_deg': 12.0, 'el_deg': 12.0}
            side = data.get('sidelobe_half_width')
            grid = data.get('grid')
            return cls(
                look=(look['az_deg'], look['el_deg']),
                interferences=[
                    (i['az_deg'], i['el_deg'], i['suppression_db'])
                    for i in data.get('interferences', [])
                ],
                sidelobe_db=data.get('sidelobe_db'),
                mainlobe_half_width=(width['az_deg'], width['el_deg']),
                sidelobe_half_width=(side['az_deg'], side['el_deg']) if side else None,
                grid=SearchGrid.from_dict(grid) if grid else None,
                noise_model=data.get('noise_model', 'isotropic')
            )
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f'malformed pattern spec: {e}', field='spec')

    @classmethod
    def default(cls):
        return cls.from_dict(array_configs.DEFAULT_PATTERN_SPEC)


@dataclass(frozen=True, eq=False)
class BeamformerSolution:

    weights: np.ndarray
    sensor_order: Tuple[Tuple[int, int], ...]
    look: Tuple[float, float]
    objective: float
    directivity_dbi: float
    noise_model_directivity_dbi: float
    interference_suppression_db: List[float]
    sidelobe_over_requirement_pct: float
    status: str
    iterations: int
    duality_gap: Optional[float]
    solve_seconds: float
    solver: str

    def metrics(self):
        return {
            'directivity_dbi': self.directivity_dbi,
            'noise_model_directivity_dbi': self.noise_model_directivity_dbi,
            'interference_suppression_db': [float(v) for v in self.interference_suppression_db],
            'sidelobe_over_requirement_pct': self.sidelobe_over_requirement_pct,
            'objective': self.objective,
            'solve_seconds': self.solve_seconds,
            'status': self.status,
            'iterations': self.iterations,
            'duality_gap': self.duality_gap,
            'solver': self.solver
        }


def look_steering(array, az_deg, el_deg):
    """Steering matrix (sensors x directions) for broadside-referenced angles."""
    theta, phi = normalized_doa(
        np.atleast_1d(az_deg), np.atleast_1d(el_deg),
        array.spacing_over_lambda, convention='broadside'
    )
    return steering_matrix(array.as_array(), theta, phi)


def isotropic_noise_matrix(array, loading=True):
    """Spatial covariance of isotropic noise: sinc(2 pi |p_m - p_n| / lambda).

    With `loading`, 1e-8 * trace / side is added to the diagonal.
    """
    diffs = pairwise_differences(array.as_array()) * array.spacing_over_lambda
    distance = np.hypot(diffs[:, 0], diffs[:, 1]).reshape(array.size, array.size)
    # np.sinc(x) = sin(pi x) / (pi x)
    B = np.sinc(2 * distance)
    if loading:
        B = B + 1e-8 * np.trace(B) / array.size * np.eye(array.size)
    return B


def noise_matrix(array, model='isotropic'):
    if model == 'identity':
        return np.eye(array.size)
    return isotropic_noise_matrix(array)


def directivity(array, w, look=(0.0, 0.0), noise=None):
    """10 log10(|w^H a(look)|^2 / (w^H B w)), B the unloaded isotropic matrix."""
    w = np.asarray(w, dtype=complex).reshape(-1)
    if not np.any(w):
        raise ValidationError('weights are all zero', field='w')
    B = isotropic_noise_matrix(array, loading=False) if noise is None else noise
    a = look_steering(array, *look)[:, 0]
    denominator = float(np.real(w.conj() @ B @ w))
    if denominator <= 0:
        raise NumericalError('radiated power is not positive', field='w')
    return float(10 * np.log10(np.abs(w.conj() @ a) ** 2 / denominator))


def response(array, w, az_deg, el_deg):
    """w^H a(az, el) for each direction."""
    w = np.asarray(w, dtype=complex).reshape(-1)
    return w.conj() @ look_steering(array, az_deg, el_deg)


def pattern_cut(array, w, grid, look=(0.0, 0.0)):
    """Pattern in dB relative to the look direction, shape grid.shape."""
    az, el = grid.mesh()
    values = np.abs(response(array, w, az.reshape(-1), el.reshape(-1)))
    reference = np.abs(response(array, w, [look[0]], [look[1]]))[0]
    with np.errstate(divide='ignore'):
        gain = 20 * np.log10(values / reference)
    return gain.reshape(grid.shape)


def _real_rows(A):
    """Rows mapping x = [Re w; Im w] to Re and Im of a^H w, per column of A."""
    Ar, Ai = A.real.T, A.imag.T
    return np.hstack([Ar, Ai]), np.hstack([-Ai, Ar])


def _real_quadratic(R):
    """Real symmetric matrix M with x^T M x = w^H R w."""
    Rr, Ri = R.real, R.imag
    M = np.block([[Rr, -Ri], [Ri, Rr]])
    return (M + M.T) / 2


class PatternSynthesizer:

    """Minimum radiated-power weights under pattern constraints, as an SOCP.

    Variables are x = [Re w; Im w] and an epigraph scalar t. Cone order is
    the objective cone ||C x|| <= t (C^T C = Rn in real form), then the
    interference cones, then the sidelobe cones in grid order.
    """

    def __init__(self, array, solver='CLARABEL'):
        self.array = array
        self.solver = solver

    def _constraints(self, spec):
        directions, bounds, labels = [], [], []
        for (az, el, level) in spec.interferences:
            directions.append((az, el))
            bounds.append(10 ** (level / 20))
            labels.append(f'interference at ({az:g}, {el:g}) <= {level:g} dB')
        side_az, side_el = spec.sidelobe_points()
        for az, el in zip(side_az, side_el):
            directions.append((float(az), float(el)))
            bounds.append(10 ** (spec.sidelobe_db / 20))
            labels.append(f'sidelobe at ({az:g}, {el:g}) <= {spec.sidelobe_db:g} dB')
        return directions, np.array(bounds), labels

    def _solve(self, problem):
        solvers = [self.solver] + [s for s in ('CLARABEL', 'ECOS') if s != self.solver]
        last_error = None
        for name in solvers:
            try:
                problem.solve(solver=name, **SOLVER_OPTIONS.get(name, {}))
                return name
            except (cp.SolverError, ValueError) as e:
                last_error = e
                logger.warning(f'Solver {name} failed: {e}')
        raise NumericalError(f'all solvers failed: {last_error}', field='solver')

    @staticmethod
    def _duality_gap(problem):
        """Relative complementarity gap sum_k <s_k, z_k> / |objective| over the cones.

        For a primal-dual feasible pair this is the difference between the
        primal and dual objectives.
        """
        total = 0.0
        for constraint in problem.constraints:
            if not isinstance(constraint, cp.SOC):
                continue
            dual = constraint.dual_value
            if dual is None:
                return None
            t_dual, x_dual = dual
            t_value, x_value = constraint.args[0].value, constraint.args[1].value
            if t_value is None or x_value is None:
                return None
            total += float(np.sum(np.ravel(t_dual) * np.ravel(t_value)))
            total += float(np.sum(np.ravel(x_dual) * np.ravel(x_value)))
        if problem.value is None or not np.isfinite(problem.value):
            return None
        return abs(total) / max(abs(float(problem.value)), 1e-12)

    def _diagnose(self, G_re, G_im, bounds, eq_re, eq_im, labels):
        """Phase-I problem: smallest common slack s making every bound feasible."""
        n2 = G_re.shape[1]
        x = cp.Variable(n2)
        s = cp.Variable()
        constraints = [
            eq_re @ x == 1,
            eq_im @ x == 0,
            cp.SOC(s + bounds, cp.vstack([G_re @ x, G_im @ x]), axis=0)
        ]
        problem = cp.Problem(cp.Minimize(s), constraints)
        self._solve(problem)
        if x.value is None:
            return None, None
        excess = np.hypot(G_re @ x.value, G_im @ x.value) - bounds
        worst = int(np.argmax(excess))
        return labels[worst], float(s.value)

    def __call__(self, spec):
        array = self.array
        Rn = noise_matrix(array, spec.noise_model)
        a_look = look_steering(array, *spec.look)[:, 0]
        directions, bounds, labels = self._constraints(spec)
        started = time.perf_counter()

        if not directions:
            # Equality-only problem: w = Rn^-1 a / (a^H Rn^-1 a)
            z = scipy.linalg.solve(Rn, a_look, assume_a='pos')
            w = z / (a_look.conj() @ z)
            status, iterations, gap, solver = 'optimal', 0, 0.0, 'closed-form'
        else:
            A = look_steering(array, [d[0] for d in directions], [d[1] for d in directions])
            G_re, G_im = _real_rows(A)
            eq_re, eq_im = _real_rows(a_look[:, None])
            eq_re, eq_im = eq_re[0], eq_im[0]
            C = scipy.linalg.cholesky(_real_quadratic(Rn), lower=False)

            x = cp.Variable(2 * array.size)
            t = cp.Variable()
            constraints = [
                cp.SOC(t, C @ x),
                eq_re @ x == 1,
                eq_im @ x == 0,
                cp.SOC(cp.Constant(bounds), cp.vstack([G_re @ x, G_im @ x]), axis=0)
            ]
            problem = cp.Problem(cp.Minimize(t), constraints)
            solver = self._solve(problem)
            status = problem.status
            iterations = int(problem.solver_stats.num_iters or 0)
            gap = self._duality_gap(problem)

            if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
                constraint, slack = self._diagnose(G_re, G_im, bounds, eq_re, eq_im, labels)
                raise InfeasibleError(
                    f'pattern constraints are infeasible; most violated: {constraint} '
                    f'(needs slack {slack:.3g})' if constraint else
                    'pattern constraints are infeasible',
                    constraint=constraint,
                    slack=slack,
                    field='spec'
                )
            if x.value is None:
                raise NumericalError(
                    f'solver stopped with status {status} after {iterations} iterations '
                    f'(duality gap {gap})',
                    field='solver'
                )
            w = x.value[:array.size] + 1j * x.value[array.size:]
            w = w / (a_look.conj() @ w)

        solve_seconds = time.perf_counter() - started
        solution = self._report(spec, w, Rn, status, iterations, gap, solve_seconds, solver)
        logger.info(
            f'{array.label}: {status} via {solver} in {solve_seconds:.2f} s '
            f'({iterations} iterations), directivity {solution.directivity_dbi:.4f} dBi, '
            f'sidelobe over-requirement {solution.sidelobe_over_requirement_pct:g}%'
        )
        return solution

    def _report(self, spec, w, Rn, status, iterations, gap, solve_seconds, solver):
        array = self.array
        suppression = []
        if spec.interferences:
            values = np.abs(response(
                array, w,
                [i[0] for i in spec.interferences],
                [i[1] for i in spec.interferences]
            ))
            suppression = [float(v) for v in 20 * np.log10(values)]

        over = 0.0
        side_az, side_el = spec.sidelobe_points()
        if len(side_az):
            with np.errstate(divide='ignore'):
                gain = 20 * np.log10(np.abs(response(array, w, side_az, side_el)))
            over = float(100 * np.mean(gain > spec.sidelobe_db + SIDELOBE_TOL_DB))

        return BeamformerSolution(
            weights=w,
            sensor_order=array.positions,
            look=spec.look,
            objective=float(np.real(w.conj() @ Rn @ w)),
            directivity_dbi=directivity(array, w, spec.look),
            noise_model_directivity_dbi=directivity(array, w, spec.look, noise=Rn),
            interference_suppression_db=suppression,
            sidelobe_over_requirement_pct=over,
            status=str(status),
            iterations=iterations,
            duality_gap=gap,
            solve_seconds=solve_seconds,
            solver=solver
        )


def synthesize(array, spec, solver='CLARABEL'):
    return PatternSynthesizer(array, solver=solver)(spec)
