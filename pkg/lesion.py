# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
import logging

from trytond.i18n import gettext
from trytond.model import (ModelSingleton, ModelSQL, ModelView, Unique,
    Workflow, fields)
from trytond.pool import Pool
from trytond.pyson import Eval

from . import common
from .calibration import (LongitudinalManifest, SubjectEntry, TimepointEntry,
    SUPERVISED, compare_with_baseline, cross_validate)
from .counting import (DIRECT_THRESHOLD, PERSISTENCE, DEFAULT_TAU_GRID,
    DEFAULT_THETA_GRID, direct_threshold_count, make_grid)
from .exceptions import CalibrationError
from .filtration import pcount_merge
from .volume_io import load_volume, preprocess

logger = logging.getLogger(__name__)

METHODS = [
    (PERSISTENCE, 'Persistence'),
    (DIRECT_THRESHOLD, 'Direct Threshold'),
    ]


class Configuration(ModelSingleton, ModelSQL, ModelView):
    "Lesion Count Configuration"
    __name__ = 'lesion.configuration'

    method = fields.Selection(METHODS, "Method", required=True)
    theta = fields.Float("Persistence Threshold", digits=(16, 6),
        required=True, domain=[('theta', '>=', 0)])
    tau = fields.Float("Probability Threshold", digits=(16, 6),
        required=True, domain=[('tau', '>', 0), ('tau', '<=', 1)])
    mask_eps = fields.Float("Background Mask", digits=(16, 6),
        required=True, domain=[('mask_eps', '>=', 0), ('mask_eps', '<', 1)],
        help="Voxels with a probability at or below this value are ignored")
    crop = fields.Boolean("Crop",
        help="Crop volumes to their foreground before counting")
    crop_eps = fields.Float("Crop Threshold", digits=(16, 6), required=True,
        domain=[('crop_eps', '>=', 0), ('crop_eps', '<', 1)])
    downsample = fields.Integer("Downsample Factor", required=True,
        domain=[('downsample', '>=', 1)])

    @staticmethod
    def default_method():
        return PERSISTENCE

    @staticmethod
    def default_theta():
        return common.get_theta()

    @staticmethod
    def default_tau():
        return common.get_tau()

    @staticmethod
    def default_mask_eps():
        return common.get_mask_eps()

    @staticmethod
    def default_crop():
        return False

    @staticmethod
    def default_crop_eps():
        return common.get_crop_eps()

    @staticmethod
    def default_downsample():
        return 1

    @property
    def threshold(self):
        return self.theta if self.method == PERSISTENCE else self.tau

    @property
    def preprocessing(self):
        return {
            'crop': bool(self.crop),
            'crop_eps': self.crop_eps,
            'factor': self.downsample,
            }


class Subject(ModelSQL, ModelView):
    "Lesion Subject"
    __name__ = 'lesion.subject'

    name = fields.Char("Name", required=True)
    timepoints = fields.One2Many('lesion.timepoint', 'subject', "Timepoints")
    timepoint_count = fields.Function(fields.Integer("Timepoints Count"),
        'get_timepoint_count')

    @classmethod
    def __setup__(cls):
        super().__setup__()
        t = cls.__table__()
        cls._sql_constraints += [
            ('name_uniq', Unique(t, t.name),
                'lesion_count.msg_subject_name_unique'),
            ]
        cls._order.insert(0, ('name', 'ASC'))

    def get_timepoint_count(self, name):
        return len(self.timepoints)

    def to_entry(self):
        timepoints = sorted(self.timepoints, key=lambda x: x.t_index)
        return SubjectEntry(self.name, [
                TimepointEntry(x.t_index, x.volume_path, x.gt_count)
                for x in timepoints])


class Timepoint(ModelSQL, ModelView):
    "Lesion Timepoint"
    __name__ = 'lesion.timepoint'

    subject = fields.Many2One('lesion.subject', "Subject", required=True,
        ondelete='CASCADE')
    t_index = fields.Integer("Time Index", required=True,
        domain=[('t_index', '>=', 1)])
    volume_path = fields.Char("Volume Path", required=True,
        help="NIfTI-1 file or raw_json header of the probability map")
    gt_count = fields.Integer("Ground Truth Count",
        domain=['OR',
            ('gt_count', '=', None),
            ('gt_count', '>=', 0),
            ])
    count = fields.Integer("Count", readonly=True)
    method = fields.Selection([(None, '')] + METHODS, "Method",
        readonly=True)
    threshold = fields.Float("Threshold", digits=(16, 6), readonly=True)

    @classmethod
    def __setup__(cls):
        super().__setup__()
        t = cls.__table__()
        cls._sql_constraints += [
            ('subject_t_index_uniq', Unique(t, t.subject, t.t_index),
                'lesion_count.msg_timepoint_t_index_unique'),
            ]
        cls._order.insert(0, ('t_index', 'ASC'))
        cls._buttons.update({
                'compute_count': {
                    'icon': 'tryton-launch',
                    },
                })

    def get_rec_name(self, name):
        return '%s @ %s' % (self.subject.rec_name, self.t_index)

    @classmethod
    @ModelView.button
    def compute_count(cls, timepoints):
        pool = Pool()
        Configuration = pool.get('lesion.configuration')

        config = Configuration(1)
        for timepoint in timepoints:
            vol = preprocess(load_volume(timepoint.volume_path),
                **config.preprocessing)
            if config.method == PERSISTENCE:
                count = pcount_merge(vol, config.theta, config.mask_eps).count
            else:
                count = direct_threshold_count(vol, config.tau)
            timepoint.count = count
            timepoint.method = config.method
            timepoint.threshold = config.threshold
            logger.info('%s: %d lesions', timepoint.volume_path, count)
        cls.save(timepoints)


class Calibration(Workflow, ModelSQL, ModelView):
    "Lesion Threshold Calibration"
    __name__ = 'lesion.calibration'

    _states = {
        'readonly': Eval('state') != 'draft',
        }

    name = fields.Char("Name", required=True, states=_states)
    mode = fields.Selection([
            ('supervised', 'Supervised'),
            ('unsupervised', 'Unsupervised'),
            ], "Mode", required=True, states=_states)
    method = fields.Selection(METHODS, "Method", required=True,
        states=_states)
    grid_start = fields.Float("Grid Start", digits=(16, 6), required=True,
        states=_states)
    grid_stop = fields.Float("Grid Stop", digits=(16, 6), required=True,
        states=_states)
    grid_step = fields.Float("Grid Step", digits=(16, 6), required=True,
        states=_states, domain=[('grid_step', '>', 0)])
    folds = fields.Integer("Folds", required=True, states=_states,
        domain=[('folds', '>=', 2)])
    seed = fields.Integer("Seed", required=True, states=_states)
    compare_baseline = fields.Boolean("Compare with Direct Threshold",
        states={
            'readonly': Eval('state') != 'draft',
            'invisible': Eval('method') != PERSISTENCE,
            })
    state = fields.Selection([
            ('draft', 'Draft'),
            ('done', 'Done'),
            ], "State", readonly=True, required=True)
    theta_star = fields.Float("Selected Threshold", digits=(16, 6),
        readonly=True)
    mean_mae = fields.Float("Mean Absolute Error", digits=(16, 4),
        readonly=True)
    baseline_mean_mae = fields.Float("Baseline Mean Absolute Error",
        digits=(16, 4), readonly=True)
    p_value = fields.Float("p-value", readonly=True)
    report = fields.Text("Report", readonly=True)

    del _states

    @classmethod
    def __setup__(cls):
        super().__setup__()
        cls._order.insert(0, ('id', 'DESC'))
        cls._transitions |= set((
                ('draft', 'done'),
                ('done', 'draft'),
                ))
        cls._buttons.update({
                'calibrate': {
                    'invisible': Eval('state') != 'draft',
                    'depends': ['state'],
                    'icon': 'tryton-forward',
                    },
                'draft': {
                    'invisible': Eval('state') != 'done',
                    'depends': ['state'],
                    'icon': 'tryton-back',
                    },
                'apply': {
                    'invisible': Eval('state') != 'done',
                    'depends': ['state'],
                    'icon': 'tryton-ok',
                    },
                })

    @staticmethod
    def default_state():
        return 'draft'

    @staticmethod
    def default_mode():
        return SUPERVISED

    @staticmethod
    def default_method():
        return PERSISTENCE

    @staticmethod
    def default_grid_start():
        return float(DEFAULT_THETA_GRID[0])

    @staticmethod
    def default_grid_stop():
        return float(DEFAULT_THETA_GRID[-1])

    @staticmethod
    def default_grid_step():
        return 0.004

    @staticmethod
    def default_folds():
        return common.get_folds()

    @staticmethod
    def default_seed():
        return common.get_seed()

    @staticmethod
    def default_compare_baseline():
        return False

    @fields.depends('method')
    def on_change_method(self):
        if self.method == DIRECT_THRESHOLD:
            grid, self.grid_step = DEFAULT_TAU_GRID, 0.1
            self.compare_baseline = False
        else:
            grid, self.grid_step = DEFAULT_THETA_GRID, 0.004
        self.grid_start = float(grid[0])
        self.grid_stop = float(grid[-1])

    @property
    def grid(self):
        return make_grid(self.grid_start, self.grid_stop, self.grid_step)

    @classmethod
    def get_manifest(cls):
        pool = Pool()
        Subject = pool.get('lesion.subject')

        subjects = Subject.search([])
        if not subjects:
            raise CalibrationError(gettext('lesion_count.msg_no_subjects'))
        return LongitudinalManifest([s.to_entry() for s in subjects])

    @classmethod
    @ModelView.button
    @Workflow.transition('done')
    def calibrate(cls, calibrations):
        pool = Pool()
        Configuration = pool.get('lesion.configuration')

        config = Configuration(1)
        manifest = cls.get_manifest()
        for calibration in calibrations:
            kwargs = dict(mask_eps=config.mask_eps, jobs=common.get_jobs(),
                **config.preprocessing)
            if (calibration.compare_baseline
                    and calibration.method == PERSISTENCE):
                report = compare_with_baseline(manifest, calibration.mode,
                    calibration.grid, folds=calibration.folds,
                    seed=calibration.seed, **kwargs)
                calibration.baseline_mean_mae = report.baseline.mean_mae
                calibration.p_value = report.ttest[1]
            else:
                report = cross_validate(manifest, calibration.grid,
                    calibration.mode, calibration.folds, calibration.seed,
                    calibration.method, **kwargs)
                calibration.baseline_mean_mae = None
                calibration.p_value = None
            calibration.theta_star = report.theta_star
            calibration.mean_mae = report.mean_mae
            calibration.report = report.write()
        cls.save(calibrations)

    @classmethod
    @ModelView.button
    @Workflow.transition('draft')
    def draft(cls, calibrations):
        cls.write(calibrations, {
                'theta_star': None,
                'mean_mae': None,
                'baseline_mean_mae': None,
                'p_value': None,
                'report': None,
                })

    @classmethod
    @ModelView.button
    def apply(cls, calibrations):
        pool = Pool()
        Configuration = pool.get('lesion.configuration')

        config = Configuration(1)
        for calibration in calibrations:
            if calibration.theta_star is None:
                continue
            config.method = calibration.method
            if calibration.method == PERSISTENCE:
                config.theta = calibration.theta_star
            else:
                config.tau = calibration.theta_star
        config.save()
