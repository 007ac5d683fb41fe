import os
import sys
import json
import time
import logging
import argparse

import lib
import lib.array_configs as array_configs
import lib.artifacts as artifacts
from lib.beamform import PatternSpec, PatternSynthesizer, pattern_cut
from lib.coarray import coarray_summary, difference_coarray
from lib.doa import CoarrayMusic
from lib.errors import RcpaError, ValidationError
from lib.geometry import build_array
from lib.grids import SearchGrid
from lib.montecarlo import SweepSpec, run_sweep
from lib.signals import analytic_covariance, simulate_covariance

logger = logging.getLogger('rcpa')

EXIT_CODES = {'validation': 1, 'numerical': 2}

# Flags taking start:stop:step values, which may begin with a minus sign
RANGE_FLAGS = ('--az', '--el', '--theta', '--phi')


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def attach_range_values(argv):
    """Rewrite `--az -50:50:0.5` as `--az=-50:50:0.5` so argparse keeps the value."""
    out = []
    tokens = iter(argv)
    for token in tokens:
        if token in RANGE_FLAGS:
            value = next(tokens, None)
            out.append(token if value is None else f'{token}={value}')
        else:
            out.append(token)
    return out


def resolve_seed(args):
    if args.seed is not None:
        return args.seed
    value = os.environ.get(array_configs.SEED_ENV_VAR)
    if value is None:
        return array_configs.DEFAULT_SEED
    try:
        return int(value)
    except ValueError:
        raise ValidationError(
            f'{array_configs.SEED_ENV_VAR}={value!r} is not an integer', field='seed'
        )


def reference_hole_percent(label):
    """Quoted hole percentage for a preset array, matched by label."""
    for name, value in array_configs.QUOTED_HOLE_PERCENT.items():
        preset = dict(array_configs.ARRAYS[name])
        if build_array(preset.pop('type'), **preset).label == label:
            return value
    return None


def parameters_of(args):
    return {k: v for k, v in vars(args).items() if k not in ('handler',)}


def run_array(args, manifest):
    params = {'spacing_over_lambda': args.spacing}
    if args.type == 'gcpa':
        params.update(n1=args.n1, m1=args.m1, n2=args.n2, m2=args.m2)
    else:
        params.update(m=args.m, n=args.n)
    if args.type == 'cpa':
        params['offset'] = tuple(args.offset)
    if any(v is None for v in params.values()):
        missing = [k for k, v in params.items() if v is None]
        raise ValidationError(f'{args.type} needs --{missing[0]}', field=missing[0])

    array = build_array(args.type, **params)
    artifacts.save_array(args.out, array)
    logger.info(f'Generated {array.label} with {array.size} sensors -> {args.out}')
    return args.out


def run_coarray(args, manifest):
    array = artifacts.load_array(args.input)
    manifest.add_input(args.input)
    co = difference_coarray(array)
    reference = reference_hole_percent(array.label)
    artifacts.write_json(args.out, artifacts.coarray_report(co, reference))
    if args.csv:
        artifacts.write_csv(args.csv, artifacts.weight_grid_frame(co))
    if args.summary:
        coarrays = [co]
        for path in args.compare:
            coarrays.append(difference_coarray(artifacts.load_array(path)))
            manifest.add_input(path)
        references = {c.label: reference_hole_percent(c.label) for c in coarrays}
        references = {k: v for k, v in references.items() if v is not None}
        artifacts.write_csv(args.summary, coarray_summary(coarrays, references))

    logger.info(
        f'{co.label}: {co.sensor_count} sensors, {co.virtual_sensor_count} lags, '
        f'contiguous half-width {co.contiguous_half_width}, '
        f'{len(co.holes)} holes / {co.bounding_box_points} = {100 * co.hole_fraction:.4f}%'
    )
    if reference is not None:
        logger.info(
            f'{co.label}: quoted hole figure {reference}% (unreconciled convention, '
            f'not compared)'
        )
    return args.out


def run_simulate(args, manifest):
    array = artifacts.load_array(args.array)
    scene = artifacts.load_scene(args.scene)
    manifest.add_input(args.array)
    manifest.add_input(args.scene)
    if args.seed is not None:
        scene = scene.with_values(seed=args.seed)
    manifest.seed = scene.seed

    if args.exact:
        cov = analytic_covariance(array, scene)
    else:
        cov = simulate_covariance(array, scene)
    artifacts.save_covariance(args.out, cov)
    logger.info(
        f'Covariance of {array.label}: {len(scene.sources)} sources, '
        f'{cov.snapshots_used} snapshots, seed {scene.seed} ({cov.generator})'
    )
    return args.out


def run_music(args, manifest):
    array = artifacts.load_array(args.array)
    cov = artifacts.load_covariance(args.cov)
    manifest.add_input(args.array)
    manifest.add_input(args.cov)
    if args.normalized:
        grid = SearchGrid.normalized(args.theta, args.phi)
    else:
        grid = SearchGrid.angles(args.az, args.el)

    music = CoarrayMusic(array, grid, args.method, refine=args.refine)
    result = music(cov, args.sources)
    artifacts.write_csv(args.out_spectrum, artifacts.spectrum_frame(result))
    artifacts.write_json(args.out_peaks, artifacts.peaks_records(result))
    for peak in result.peaks:
        logger.info(f'Peak at ({peak[0]:g}, {peak[1]:g}), value {peak[2]:.4g}')
    return args.out_spectrum


def run_rmse(args, manifest):
    spec = SweepSpec.from_dict(artifacts.read_json(args.spec, 'spec'))
    manifest.add_input(args.spec)
    seed = resolve_seed(args)
    manifest.seed = seed

    report = run_sweep(spec, seed=seed, threads=args.threads)
    report.to_csv(args.out)
    manifest.parameters['sweep'] = report.metadata
    return args.out


def run_beamform(args, manifest):
    array = artifacts.load_array(args.array)
    manifest.add_input(args.array)
    if args.spec:
        spec = PatternSpec.from_dict(artifacts.read_json(args.spec, 'spec'))
        manifest.add_input(args.spec)
    else:
        spec = PatternSpec.default()

    solution = PatternSynthesizer(array, solver=args.solver)(spec)
    artifacts.write_json(args.out_weights, artifacts.weights_records(solution))
    if args.out_metrics:
        artifacts.write_json(args.out_metrics, solution.metrics())
    if args.out_pattern:
        grid = spec.grid or SearchGrid.from_dict(array_configs.DEFAULT_PATTERN_SPEC['grid'])
        gain = pattern_cut(array, solution.weights, grid, spec.look)
        artifacts.write_csv(args.out_pattern, artifacts.pattern_frame(gain, grid))

    reference = array_configs.QUOTED_PATTERN_METRICS
    logger.info(
        f'Directivity {solution.directivity_dbi:.4f} dBi '
        f'(quoted {reference["directivity_dbi"]}), suppression '
        f'{[round(v, 4) for v in solution.interference_suppression_db]} dB '
        f'(quoted {reference["interference_suppression_db"]})'
    )
    return args.out_weights


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--threads',
        type=int,
        default=1,
        help='Upper bound on worker threads'
    )
    common.add_argument(
        '--seed',
        type=int,
        default=None,
        help=f'Master seed (default: ${array_configs.SEED_ENV_VAR} or 0)'
    )
    common.add_argument(
        '--verbose',
        action='store_true'
    )

    parser = Parser(prog='main.py', description='Coprime planar array toolkit')
    parser.add_argument('--version', action='version', version=lib.__version__)
    commands = parser.add_subparsers(dest='command', parser_class=Parser)
    commands.required = True

    # Array generation
    array = commands.add_parser('array', parents=[common])
    array_commands = array.add_subparsers(dest='action', parser_class=Parser)
    array_commands.required = True
    gen = array_commands.add_parser('gen', parents=[common])
    gen.add_argument(
        '--type',
        type=str,
        required=True,
        choices=['coprime1d', 'rcpa', 'cpa', 'gcpa']
    )
    for name in ('--m', '--n', '--n1', '--m1', '--n2', '--m2'):
        gen.add_argument(name, type=int, default=None)
    gen.add_argument(
        '--offset',
        type=int,
        nargs=2,
        default=[0, 0],
        help='Offset of the second cpa subarray'
    )
    gen.add_argument(
        '--spacing',
        type=float,
        default=0.5,
        help='Sensor spacing over wavelength'
    )
    gen.add_argument('--out', type=str, required=True)
    gen.set_defaults(handler=run_array)

    # Coarray analysis
    coarray = commands.add_parser('coarray', parents=[common])
    coarray.add_argument('--in', dest='input', type=str, required=True)
    coarray.add_argument('--out', type=str, required=True)
    coarray.add_argument(
        '--csv',
        type=str,
        default=None,
        help='Weight heat-map (lx, ly, weight)'
    )
    coarray.add_argument(
        '--summary',
        type=str,
        default=None,
        help='Hole table (CSV) for this array and any --compare arrays'
    )
    coarray.add_argument('--compare', type=str, nargs='*', default=[])
    coarray.set_defaults(handler=run_coarray)

    # Simulation
    simulate = commands.add_parser('simulate', parents=[common])
    simulate.add_argument('--array', type=str, required=True)
    simulate.add_argument('--scene', type=str, required=True)
    simulate.add_argument('--out', type=str, required=True)
    simulate.add_argument(
        '--exact',
        action='store_true',
        help='Write the analytic covariance instead of a sample estimate'
    )
    simulate.set_defaults(handler=run_simulate)

    # MUSIC
    music = commands.add_parser('music', parents=[common])
    music.add_argument('--array', type=str, required=True)
    music.add_argument('--cov', type=str, required=True)
    music.add_argument('--sources', type=int, required=True)
    music.add_argument('--az', type=str, default=array_configs.MUSIC_GRID['az'])
    music.add_argument('--el', type=str, default=array_configs.MUSIC_GRID['el'])
    music.add_argument(
        '--normalized',
        action='store_true',
        help='Search over normalized DOAs given by --theta and --phi'
    )
    music.add_argument('--theta', type=str, default=array_configs.SWEEP_GRID['theta'])
    music.add_argument('--phi', type=str, default=array_configs.SWEEP_GRID['phi'])
    music.add_argument(
        '--method',
        type=str,
        default='augmentation',
        choices=['augmentation', 'smoothing']
    )
    music.add_argument(
        '--refine',
        action='store_true',
        help='Polish each peak off the grid with a local search'
    )
    music.add_argument('--out-spectrum', type=str, required=True)
    music.add_argument('--out-peaks', type=str, required=True)
    music.set_defaults(handler=run_music)

    # RMSE sweeps
    rmse = commands.add_parser('rmse', parents=[common])
    rmse.add_argument('--spec', type=str, required=True)
    rmse.add_argument('--out', type=str, required=True)
    rmse.set_defaults(handler=run_rmse)

    # Beamforming
    beamform = commands.add_parser('beamform', parents=[common])
    beamform.add_argument('--array', type=str, required=True)
    beamform.add_argument(
        '--spec',
        type=str,
        default=None,
        help='PatternSpec JSON (default: built-in pattern requirements)'
    )
    beamform.add_argument(
        '--solver',
        type=str,
        default='CLARABEL',
        choices=['CLARABEL', 'ECOS']
    )
    beamform.add_argument('--out-weights', type=str, required=True)
    beamform.add_argument('--out-metrics', type=str, default=None)
    beamform.add_argument('--out-pattern', type=str, default=None)
    beamform.set_defaults(handler=run_beamform)

    return parser


def report_error(error):
    print(json.dumps(error.as_record()), file=sys.stderr)


def dispatch(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(attach_range_values(argv))
    except UsageError as e:
        report_error(ValidationError(str(e)))
        return 1
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        force=True
    )
    logger.debug(f'Arguments: {parameters_of(args)}')

    manifest = artifacts.RunManifest(
        command=args.command,
        argv=argv,
        parameters=parameters_of(args)
    )
    started = time.perf_counter()
    try:
        if args.threads < 1:
            raise ValidationError(f'threads={args.threads} must be at least 1', field='threads')
        primary = args.handler(args, manifest)
    except RcpaError as e:
        report_error(e)
        return EXIT_CODES[e.code]
    except OSError as e:
        report_error(ValidationError(str(e), field=getattr(e, 'filename', None)))
        return 1

    manifest.wall_seconds = time.perf_counter() - started
    manifest.write(primary)
    logger.info(f'Done in {manifest.wall_seconds:.2f} s')
    return 0


if __name__ == '__main__':
    sys.exit(dispatch())
