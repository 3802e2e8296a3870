# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .filtration import compute_persistence, count_from_diagram

logger = logging.getLogger(__name__)

PERSISTENCE = 'persistence'
DIRECT_THRESHOLD = 'direct_threshold'
METHODS = (PERSISTENCE, DIRECT_THRESHOLD)

FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)
SWEEP_CSV_HEADER = ['method', 'threshold', 'count']
GRID_TOLERANCE = 1e-9


def make_grid(start, stop, step):
    "Inclusive range; stop is kept when it lies on the step lattice"
    if not step > 0:
        raise ValueError('Grid step must be positive, got %r' % step)
    if stop < start:
        raise ValueError('Grid stop %r is below start %r' % (stop, start))
    steps = (stop - start) / step
    if abs(steps - round(steps)) < GRID_TOLERANCE:
        count = int(round(steps)) + 1
    else:
        count = int(math.floor(steps)) + 1
    return np.array([round(start + i * step, 10) for i in range(count)])


def parse_grid(text):
    "Parse 'A:B:STEP'"
    try:
        start, stop, step = (float(x) for x in text.split(':'))
    except (AttributeError, ValueError):
        raise ValueError('Grid must look like A:B:STEP, got %r' % (text,))
    return make_grid(start, stop, step)


DEFAULT_TAU_GRID = make_grid(0.1, 1.0, 0.1)
DEFAULT_THETA_GRID = make_grid(0.0, 0.04, 0.004)


def default_grid(method):
    if method == PERSISTENCE:
        return DEFAULT_THETA_GRID.copy()
    return DEFAULT_TAU_GRID.copy()


def check_grid(grid, minimum=None):
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if not grid.size:
        raise ValueError('Threshold grid is empty')
    if np.any(np.diff(grid) <= 0):
        raise ValueError('Threshold grid must be strictly increasing')
    if minimum is not None and grid[0] < minimum:
        raise ValueError('Threshold grid values must be >= %s' % minimum)
    return grid


def check_method_grid(method, grid):
    "Probability grids lie in (0, 1], persistence grids are >= 0"
    if method == DIRECT_THRESHOLD:
        grid = check_grid(grid)
        if grid[0] <= 0 or grid[-1] > 1:
            raise ValueError('Probability grid values must lie in (0, 1]')
        return grid
    elif method == PERSISTENCE:
        return check_grid(grid, minimum=0)
    raise ValueError('Unknown method %r' % method)


@dataclass(frozen=True, eq=False)
class SweepResult:
    method: str
    thresholds: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError('Unknown method %r' % self.method)
        thresholds = check_grid(self.thresholds)
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != thresholds.shape:
            raise ValueError('One count per threshold is required')
        object.__setattr__(self, 'thresholds', thresholds)
        object.__setattr__(self, 'counts', counts)

    def rows(self):
        return [[self.method, '%.6f' % t, int(c)]
            for t, c in zip(self.thresholds, self.counts)]

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(SWEEP_CSV_HEADER)
            writer.writerows(self.rows())
        return path


def direct_threshold_count(vol, tau):
    "Connected components of {p >= tau}, small ones included"
    if not 0 < tau <= 1:
        raise ValueError('tau must lie in (0, 1], got %r' % tau)
    _, count = ndimage.label(vol.array >= vol.level(tau),
        structure=FACE_CONNECTIVITY)
    return int(count)


def sweep_direct(vol, taus=None):
    taus = check_method_grid(DIRECT_THRESHOLD,
        DEFAULT_TAU_GRID if taus is None else taus)
    counts = [direct_threshold_count(vol, tau) for tau in taus]
    return SweepResult(DIRECT_THRESHOLD, taus, counts)


def sweep_persistence(vol, thetas=None, mask_eps=0.0, diagram=None):
    "One diagram, read at every theta of the grid"
    thetas = check_method_grid(PERSISTENCE,
        DEFAULT_THETA_GRID if thetas is None else thetas)
    if diagram is None:
        diagram = compute_persistence(vol, mask_eps)
    counts = [count_from_diagram(diagram, theta) for theta in thetas]
    return SweepResult(PERSISTENCE, thetas, counts)


def sweep(vol, method, grid=None, mask_eps=0.0):
    if method == PERSISTENCE:
        return sweep_persistence(vol, grid, mask_eps)
    elif method == DIRECT_THRESHOLD:
        return sweep_direct(vol, grid)
    raise ValueError('Unknown method %r' % method)


def threshold_stability(result):
    "Spread of the counts across the grid; lower is steadier"
    return float(np.std(result.counts))
