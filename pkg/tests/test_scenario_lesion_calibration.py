# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
import json
import tempfile
import unittest

from proteus import Model
from trytond.modules.lesion_count.oracle import (LongitudinalSpec,
    PhantomSpec, generate_longitudinal)
from trytond.tests.test_tryton import drop_db
from trytond.tests.tools import activate_modules, assertEqual


class Test(unittest.TestCase):

    def setUp(self):
        drop_db()
        super().setUp()
        directory = tempfile.TemporaryDirectory()
        self.addCleanup(directory.cleanup)
        self.directory = directory.name

    def tearDown(self):
        drop_db()
        super().tearDown()

    def test(self):

        # Activate modules
        activate_modules('lesion_count')

        # Generate a synthetic longitudinal dataset
        manifest = generate_longitudinal(LongitudinalSpec(
                n_subjects=3, timepoints=3, lesion_range=(1, 4), seed=11,
                phantom=PhantomSpec(dims=(20, 20, 20), n_lesions=0)),
            self.directory)

        # Register subjects and timepoints
        Subject = Model.get('lesion.subject')
        for entry in manifest.subjects:
            subject = Subject(name=entry.subject_id)
            for tp in entry.timepoints:
                timepoint = subject.timepoints.new()
                timepoint.t_index = tp.t_index
                timepoint.volume_path = tp.volume_path
                timepoint.gt_count = tp.gt_count
            subject.save()
        subjects = Subject.find([])
        assertEqual(len(subjects), 3)
        assertEqual({s.timepoint_count for s in subjects}, {3})

        # Calibrate the persistence threshold against the direct threshold
        Calibration = Model.get('lesion.calibration')
        calibration = Calibration(name="Synthetic")
        calibration.folds = 3
        calibration.compare_baseline = True
        calibration.save()
        assertEqual(calibration.state, 'draft')
        calibration.click('calibrate')
        assertEqual(calibration.state, 'done')
        assertEqual(calibration.mean_mae, 0.0)
        assertEqual(calibration.theta_star, 0.0)
        report = json.loads(calibration.report)
        assertEqual(len(report['fold_maes']), 3)
        assertEqual(report['baseline']['method'], 'direct_threshold')

        # Apply the selected threshold to the configuration
        calibration.click('apply')
        Configuration = Model.get('lesion.configuration')
        config = Configuration(1)
        assertEqual(config.method, 'persistence')
        assertEqual(config.theta, 0.0)

        # Count every timepoint with the calibrated configuration
        Timepoint = Model.get('lesion.timepoint')
        timepoints = Timepoint.find([])
        for timepoint in timepoints:
            timepoint.click('compute_count')
        for timepoint in Timepoint.find([]):
            assertEqual(timepoint.count, timepoint.gt_count)
            assertEqual(timepoint.method, 'persistence')

        # Reset the calibration to draft
        calibration.click('draft')
        assertEqual(calibration.state, 'draft')
        assertEqual(calibration.report, None)
