ARRAYS = {
    'rcpa': {
        'type': 'rcpa',
        'm': 2,
        'n': 3
    },
    'cpa': {
        'type': 'cpa',
        'm': 3,
        'n': 4
    },
    'gcpa': {
        'type': 'gcpa',
        'n1': 2,
        'm1': 3,
        'n2': 3,
        'm2': 4
    },
    'coprime1d': {
        'type': 'coprime1d',
        'm': 2,
        'n': 3
    }
}

# Hole percentages quoted for the M=2, N=3 RCPA and the M=3, N=4 CPA. The
# denominator behind them is not stated; they are printed next to our own
# numbers and never used as expected values.
QUOTED_HOLE_PERCENT = {
    'rcpa': 23.52,
    'cpa': 34.4
}

QUOTED_PATTERN_METRICS = {
    'directivity_dbi': 14.8077,
    'interference_suppression_db': [-29.3044, -40.0438],
    'sidelobe_over_requirement_pct': 0.0
}

# Sidelobe bounds hold inside the +-20 degree box around the look direction
# and outside the main lobe. The main-lobe half-width is the first null of
# the filled 10 x 10 aperture, asin(0.2) = 11.5 degrees, rounded up. Both
# interferers sit just off the azimuth cut.
DEFAULT_PATTERN_SPEC = {
    'look': {'az_deg': 0.0, 'el_deg': 0.0},
    'interferences': [
        {'az_deg': 30.0, 'el_deg': 5.0, 'suppression_db': -30.0},
        {'az_deg': -40.0, 'el_deg': -5.0, 'suppression_db': -40.0}
    ],
    'sidelobe_db': -17.0,
    'mainlobe_half_width': {'az_deg': 12.0, 'el_deg': 12.0},
    'sidelobe_half_width': {'az_deg': 20.0, 'el_deg': 20.0},
    'grid': {'az': '-90:90:2', 'el': '-90:90:2'},
    'noise_model': 'isotropic'
}

MUSIC_GRID = {
    'az': '-50:50:0.5',
    'el': '-90:90:0.5'
}

# Normalized-DOA search grid used by the Monte-Carlo sweeps; one period per
# axis, so peak search wraps around
SWEEP_GRID = {
    'theta': '-0.5:0.49:0.01',
    'phi': '-0.5:0.49:0.01'
}

SEED_ENV_VAR = 'RCPA_SEED'
DEFAULT_SEED = 0
