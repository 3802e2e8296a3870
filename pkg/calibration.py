# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
"""Selection of the persistence threshold from longitudinal studies.

The supervised objective is the sum of squared count residuals against the
ground truth. The unsupervised objective is the sum, over subjects, of the
squared residuals of a least squares line fitted to each subject's counts
over time, one line per subject and threshold. Both select the smallest
threshold attaining the minimum. Cross-validation always reports the mean
absolute error against the ground truth.
"""
import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc
from trytond.i18n import gettext

from .common import dump_json, load_json
from .counting import (DIRECT_THRESHOLD, METHODS, PERSISTENCE,
    check_method_grid, default_grid, sweep)
from .exceptions import (CalibrationError, ManifestError, VolumeError,
    describe)
from .volume_io import load_volume, preprocess

logger = logging.getLogger(__name__)

SUPERVISED = 'supervised'
UNSUPERVISED = 'unsupervised'
MODES = (SUPERVISED, UNSUPERVISED)

TRAJECTORY_CSV_HEADER = ['subject', 't_index', 'method', 'threshold',
    'count', 'gt_count']


@dataclass(frozen=True)
class TimepointEntry:
    t_index: int
    volume_path: str
    gt_count: int = None


@dataclass(frozen=True)
class SubjectEntry:
    subject_id: str
    timepoints: tuple

    def __post_init__(self):
        timepoints = tuple(self.timepoints)
        if len(timepoints) < 2:
            raise ManifestError(gettext(
                    'lesion_count.msg_subject_timepoints',
                    subject=self.subject_id), str(self.subject_id))
        indices = [tp.t_index for tp in timepoints]
        if indices[0] < 1 or any(b <= a for a, b in zip(indices, indices[1:])):
            raise ManifestError(gettext(
                    'lesion_count.msg_subject_t_index',
                    subject=self.subject_id), str(self.subject_id))
        for tp in timepoints:
            if tp.gt_count is not None and tp.gt_count < 0:
                raise ManifestError(gettext(
                        'lesion_count.msg_negative_gt',
                        subject=self.subject_id), str(self.subject_id))
        object.__setattr__(self, 'timepoints', timepoints)


@dataclass(frozen=True)
class LongitudinalManifest:
    subjects: tuple

    def __post_init__(self):
        object.__setattr__(self, 'subjects', tuple(self.subjects))

    def has_ground_truth(self):
        return all(tp.gt_count is not None
            for s in self.subjects for tp in s.timepoints)

    @classmethod
    def from_dict(cls, data, base_dir=''):
        try:
            subjects = []
            for subject in data['subjects']:
                timepoints = []
                for tp in subject['timepoints']:
                    gt_count = tp.get('gt_count')
                    timepoints.append(TimepointEntry(int(tp['t_index']),
                            os.path.join(base_dir, tp['volume_path']),
                            None if gt_count is None else int(gt_count)))
                subjects.append(
                    SubjectEntry(str(subject['subject_id']), timepoints))
        except (KeyError, TypeError, ValueError):
            raise ManifestError(gettext('lesion_count.msg_manifest_invalid'),
                str(base_dir))
        return cls(subjects)

    def to_dict(self, base_dir=''):
        return {
            'subjects': [{
                    'subject_id': s.subject_id,
                    'timepoints': [{
                            't_index': tp.t_index,
                            'volume_path': (os.path.relpath(
                                    tp.volume_path, base_dir)
                                if base_dir else tp.volume_path),
                            'gt_count': tp.gt_count,
                            } for tp in s.timepoints],
                    } for s in self.subjects],
            }

    def write(self, path):
        return dump_json(self.to_dict(os.path.dirname(os.fspath(path))),
            path)


def load_manifest(path):
    path = os.fspath(path)
    return LongitudinalManifest.from_dict(load_json(path),
        os.path.dirname(path))


@dataclass(frozen=True, eq=False)
class CountTable:
    "Counts y[i][j][t]: subject i, grid index j, timepoint t"
    method: str
    theta_grid: np.ndarray
    subject_ids: tuple
    t_indices: tuple
    entries: tuple
    gt: tuple

    def __post_init__(self):
        for counts, t_indices, gt in zip(self.entries, self.t_indices,
                self.gt):
            if counts.shape != (self.theta_grid.size, t_indices.size):
                raise ValueError('Count table is not fully populated')
            if gt.shape != t_indices.shape:
                raise ValueError('Ground truth shape mismatch')

    def __len__(self):
        return len(self.subject_ids)

    def subset(self, indices):
        return CountTable(self.method, self.theta_grid,
            tuple(self.subject_ids[i] for i in indices),
            tuple(self.t_indices[i] for i in indices),
            tuple(self.entries[i] for i in indices),
            tuple(self.gt[i] for i in indices))

    def has_ground_truth(self):
        return all(not np.any(np.isnan(gt)) for gt in self.gt)


def _count_volume(path, method, grid, mask_eps, crop, crop_eps, factor):
    try:
        vol = load_volume(path)
    except OSError as exception:
        raise VolumeError(gettext('lesion_count.msg_volume_unreadable',
                error=str(exception)),
            describe(path, error=exception))
    vol = preprocess(vol, crop=crop, crop_eps=crop_eps, factor=factor)
    return sweep(vol, method, grid, mask_eps).counts


def build_count_table(manifest, theta_grid=None, method=PERSISTENCE,
        mask_eps=0.0, jobs=1, crop=False, crop_eps=0.0, factor=1):
    if method not in METHODS:
        raise ValueError('Unknown method %r' % method)
    grid = check_method_grid(method,
        default_grid(method) if theta_grid is None else theta_grid)
    paths = sorted({tp.volume_path
            for s in manifest.subjects for tp in s.timepoints})
    arguments = [(p, method, grid, mask_eps, crop, crop_eps, factor)
        for p in paths]
    if jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(_count_volume, *zip(*arguments)))
    else:
        results = [_count_volume(*a) for a in arguments]
    by_path = dict(zip(paths, results))
    logger.info('Counted %d volumes with %s over %d thresholds',
        len(paths), method, grid.size)

    entries, t_indices, gt = [], [], []
    for subject in manifest.subjects:
        entries.append(np.stack(
                [by_path[tp.volume_path] for tp in subject.timepoints],
                axis=1))
        t_indices.append(np.array(
                [tp.t_index for tp in subject.timepoints], dtype=np.int64))
        gt.append(np.array([np.nan if tp.gt_count is None else tp.gt_count
                    for tp in subject.timepoints], dtype=np.float64))
    return CountTable(method, grid,
        tuple(s.subject_id for s in manifest.subjects), tuple(t_indices),
        tuple(entries), tuple(gt))


def _json_number(value):
    if value is None:
        return None
    value = float(value)
    if math.isfinite(value):
        return value
    return 'inf' if value > 0 else '-inf'


@dataclass(eq=False)
class CalibrationReport:
    mode: str
    method: str
    theta_grid: np.ndarray
    objective_by_theta: np.ndarray
    theta_star: float
    fold_maes: list = field(default_factory=list)
    mean_mae: float = None
    fold_theta_stars: list = field(default_factory=list)
    case_errors: list = field(default_factory=list)
    baseline: 'CalibrationReport' = None
    ttest: tuple = None

    def to_dict(self):
        data = {
            'mode': self.mode,
            'method': self.method,
            'theta_star': _json_number(self.theta_star),
            'objective_by_theta': [{
                    'theta': _json_number(t),
                    'objective': _json_number(o),
                    } for t, o in zip(self.theta_grid,
                    self.objective_by_theta)],
            'fold_maes': [_json_number(m) for m in self.fold_maes],
            'fold_theta_stars': [_json_number(t)
                for t in self.fold_theta_stars],
            'mean_mae': _json_number(self.mean_mae),
            }
        if self.baseline is not None:
            data['baseline'] = self.baseline.to_dict()
        if self.ttest is not None:
            data['ttest'] = {
                't': _json_number(self.ttest[0]),
                'p': _json_number(self.ttest[1]),
                'baseline': DIRECT_THRESHOLD,
                }
        return data

    def write(self, path=None):
        return dump_json(self.to_dict(), path)


def _select(table, mode, objective):
    "Smallest threshold attaining the minimum"
    j = int(np.argmin(objective))
    return CalibrationReport(mode, table.method, table.theta_grid,
        objective, float(table.theta_grid[j]))


def supervised_objective(table, gt=None):
    gt = table.gt if gt is None else tuple(
        np.asarray(g, dtype=np.float64) for g in gt)
    if any(np.any(np.isnan(g)) for g in gt):
        raise CalibrationError(gettext('lesion_count.msg_missing_gt'))
    objective = np.zeros(table.theta_grid.size)
    for counts, truth in zip(table.entries, gt):
        objective += ((counts - truth[np.newaxis, :]) ** 2).sum(axis=1)
    return objective


def supervised_select(table, gt=None):
    return _select(table, SUPERVISED, supervised_objective(table, gt))


def linear_fit(series, t=None):
    "Ordinary least squares line through (t, y); returns (a, b, sse)"
    y = np.asarray(series, dtype=np.float64)
    if y.size < 2:
        raise CalibrationError(gettext('lesion_count.msg_fit_too_short',
                length=y.size), describe(length=y.size))
    t = (np.arange(1, y.size + 1, dtype=np.float64) if t is None
        else np.asarray(t, dtype=np.float64))
    t_mean, y_mean = t.mean(), y.mean()
    a = ((t - t_mean) * (y - y_mean)).sum() / ((t - t_mean) ** 2).sum()
    b = y_mean - a * t_mean
    residuals = y - (a * t + b)
    return float(a), float(b), float((residuals ** 2).sum())


def unsupervised_objective(table):
    objective = np.zeros(table.theta_grid.size)
    for counts, t_indices in zip(table.entries, table.t_indices):
        for j in range(table.theta_grid.size):
            objective[j] += linear_fit(counts[j], t_indices)[2]
    return objective


def unsupervised_select(table):
    return _select(table, UNSUPERVISED, unsupervised_objective(table))


def select(table, mode):
    if mode == SUPERVISED:
        return supervised_select(table)
    elif mode == UNSUPERVISED:
        return unsupervised_select(table)
    raise ValueError('Unknown mode %r' % mode)


def fold_partition(n_subjects, folds, seed):
    "Shuffle subject positions with the seed and split in near-equal folds"
    permutation = np.random.default_rng(seed).permutation(n_subjects)
    return [sorted(int(i) for i in f)
        for f in np.array_split(permutation, folds)]


def cross_validate_table(table, mode, folds=5, seed=0):
    if mode not in MODES:
        raise ValueError('Unknown mode %r' % mode)
    if folds < 2:
        raise ValueError('At least two folds are required')
    if len(table) < folds:
        raise CalibrationError(gettext(
                'lesion_count.msg_not_enough_subjects',
                subjects=len(table), folds=folds),
            describe(subjects=len(table), folds=folds))
    if not table.has_ground_truth():
        raise CalibrationError(gettext('lesion_count.msg_missing_gt'))

    errors = [None] * len(table)
    fold_maes, fold_theta_stars = [], []
    for test in fold_partition(len(table), folds, seed):
        train = [i for i in range(len(table)) if i not in test]
        selected = select(table.subset(train), mode)
        j = int(np.searchsorted(table.theta_grid, selected.theta_star))
        fold_errors = []
        for i in test:
            errors[i] = np.abs(table.gt[i] - table.entries[i][j])
            fold_errors.extend(errors[i])
        fold_maes.append(float(np.mean(fold_errors)))
        fold_theta_stars.append(selected.theta_star)
        logger.debug('Fold %s selected %s with MAE %s', test,
            selected.theta_star, fold_maes[-1])

    report = select(table, mode)
    report.fold_maes = fold_maes
    report.fold_theta_stars = fold_theta_stars
    report.mean_mae = float(np.mean(fold_maes))
    report.case_errors = [(table.subject_ids[i], int(t), float(e))
        for i in range(len(table))
        for t, e in zip(table.t_indices[i], errors[i])]
    logger.info('%s %s calibration: theta* %s, mean MAE %s', mode,
        table.method, report.theta_star, report.mean_mae)
    return report


def cross_validate(manifest, theta_grid=None, mode=SUPERVISED, folds=5,
        seed=0, method=PERSISTENCE, mask_eps=0.0, jobs=1, **preprocessing):
    table = build_count_table(manifest, theta_grid, method, mask_eps, jobs,
        **preprocessing)
    return cross_validate_table(table, mode, folds, seed)


def paired_ttest(errors_a, errors_b):
    "Two-tailed paired t-test on d = a - b; returns (t, p)"
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError('Paired samples must have equal lengths')
    if a.size < 2:
        raise ValueError('At least two pairs are required')
    d = a - b
    if not np.any(d):
        return 0.0, 1.0
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(d.size))
    dof = d.size - 1
    # two-tailed survival of Student's t via the regularized incomplete beta
    p = betainc(dof / 2, 0.5, dof / (dof + t * t))
    return float(t), float(p)


def compare_with_baseline(manifest, mode, theta_grid=None, tau_grid=None,
        folds=5, seed=0, mask_eps=0.0, jobs=1, **preprocessing):
    "Persistence report with the direct-threshold report and t-test attached"
    report = cross_validate(manifest, theta_grid, mode, folds, seed,
        PERSISTENCE, mask_eps, jobs, **preprocessing)
    baseline = cross_validate(manifest, tau_grid, mode, folds, seed,
        DIRECT_THRESHOLD, mask_eps, jobs, **preprocessing)
    report.baseline = baseline
    report.ttest = paired_ttest([e for _, _, e in report.case_errors],
        [e for _, _, e in baseline.case_errors])
    return report


def count_trajectories(table):
    "Count-versus-time rows for every subject and threshold"
    rows = []
    for subject_id, t_indices, counts, gt in zip(table.subject_ids,
            table.t_indices, table.entries, table.gt):
        for j, threshold in enumerate(table.theta_grid):
            for t, count, truth in zip(t_indices, counts[j], gt):
                rows.append([subject_id, int(t), table.method,
                        '%.6f' % threshold, int(count),
                        '' if np.isnan(truth) else int(truth)])
    return rows


def write_trajectories_csv(table, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRAJECTORY_CSV_HEADER)
        writer.writerows(count_trajectories(table))
    return path
