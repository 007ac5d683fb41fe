import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

import lib
from lib.errors import ValidationError
from lib.geometry import SensorArray
from lib.signals import GENERATOR_NAME, SampleCovariance, SourceScene

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def read_json(path, field_name=None):
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f'cannot read {path}: {e}', field=field_name)


def write_json(path, data):
    # json writes floats with repr, i.e. shortest round-trip (<= 17 digits)
    with open(path, 'w') as f:
        json.dump(data, f, indent=2)
        f.write('\n')


def write_csv(path, frame):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def file_digest(path):
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            sha.update(block)
    return sha.hexdigest()


# Arrays

def load_array(path):
    return SensorArray.from_dict(read_json(path, 'array'))


def save_array(path, array):
    write_json(path, array.to_dict())


# Coarrays

def coarray_report(co, reference_hole_percent=None):
    report = {
        'label': co.label,
        'lags': [list(lag) for lag in sorted(co.lags)],
        'weights': [[lx, ly, count] for (lx, ly), count in sorted(co.weights.items())],
        'contiguous_half_width': co.contiguous_half_width,
        'holes': [list(lag) for lag in sorted(co.holes)],
        'hole_fraction': co.hole_fraction,
        'bounding_box': list(co.bounding_box),
        'degrees_of_freedom': co.degrees_of_freedom,
        'virtual_sensor_count': co.virtual_sensor_count
    }
    if reference_hole_percent is not None:
        report['reference_hole_percent'] = {
            'value': reference_hole_percent,
            'note': 'quoted figure under an unstated convention; not reproduced'
        }
    return report


def weight_grid_frame(co):
    """Long-format heat map over the bounding box: columns lx, ly, weight."""
    min_x, _, min_y, _ = co.bounding_box
    grid = co.weight_grid()
    lx, ly = np.meshgrid(
        np.arange(grid.shape[0]) + min_x, np.arange(grid.shape[1]) + min_y, indexing='ij'
    )
    return pd.DataFrame({
        'lx': lx.reshape(-1),
        'ly': ly.reshape(-1),
        'weight': grid.reshape(-1)
    })


# Covariances

def covariance_to_dict(cov):
    return {
        'sensor_order': [list(p) for p in cov.sensor_order],
        'snapshots_used': int(cov.snapshots_used),
        'seed': cov.seed,
        'generator': cov.generator,
        'matrix': [[[float(z.real), float(z.imag)] for z in row] for row in cov.matrix]
    }


def covariance_from_dict(data):
    try:
        order = tuple(tuple(int(c) for c in p) for p in data['sensor_order'])
        pairs = np.asarray(data['matrix'], dtype=float)
        snapshots_used = int(data['snapshots_used'])
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f'malformed covariance file: {e}', field='cov')
    if pairs.shape != (len(order), len(order), 2):
        raise ValidationError(
            f'covariance matrix shape {pairs.shape[:2]} does not match '
            f'{len(order)} sensors',
            field='cov'
        )
    return SampleCovariance(
        matrix=pairs[..., 0] + 1j * pairs[..., 1],
        sensor_order=order,
        snapshots_used=snapshots_used,
        seed=data.get('seed'),
        generator=data.get('generator', GENERATOR_NAME)
    )


def load_covariance(path):
    return covariance_from_dict(read_json(path, 'cov'))


def save_covariance(path, cov):
    write_json(path, covariance_to_dict(cov))


def load_scene(path):
    return SourceScene.from_dict(read_json(path, 'scene'))


# MUSIC outputs

def spectrum_frame(result):
    first, second = result.grid.mesh()
    a, b = result.grid.column_names
    return pd.DataFrame({
        a: first.reshape(-1),
        b: second.reshape(-1),
        'spectrum': result.spectrum.reshape(-1)
    })


def peaks_records(result):
    a, b = result.grid.column_names
    return [{a: x, b: y, 'value': value} for (x, y, value) in result.peaks]


# Beamforming outputs

def weights_records(solution):
    return [{'re': float(w.real), 'im': float(w.imag)} for w in solution.weights]


def pattern_frame(gain_db, grid):
    az, el = grid.mesh()
    return pd.DataFrame({
        'az_deg': az.reshape(-1),
        'el_deg': el.reshape(-1),
        'gain_db': gain_db.reshape(-1)
    })


@dataclass
class RunManifest:

    """Provenance record written next to a command's primary output."""

    command: str
    argv: List[str]
    parameters: Dict
    inputs: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = lib.__version__
    python: str = field(default_factory=lambda: sys.version.split()[0])
    wall_seconds: float = 0.0

    def add_input(self, path):
        self.inputs[os.fspath(path)] = file_digest(path)

    @staticmethod
    def path_for(primary):
        return f'{os.fspath(primary)}.manifest.json'

    def to_dict(self):
        return {
            'command': self.command,
            'argv': list(self.argv),
            'parameters': self.parameters,
            'inputs': dict(self.inputs),
            'seed': self.seed,
            'version': self.version,
            'python': self.python,
            'wall_seconds': self.wall_seconds
        }

    def write(self, primary):
        path = self.path_for(primary)
        write_json(path, self.to_dict())
        logger.debug(f'Wrote manifest {path}')
        return path
