# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
import math
import os
import statistics
import tempfile
import time
import unittest

import numpy as np
from scipy import integrate, ndimage

from trytond.modules.lesion_count import (calibration, counting, filtration,
    oracle)
from trytond.modules.lesion_count.cli import main
from trytond.modules.lesion_count.volume_io import Volume, load_volume

QUANTIZED_GRID = [k / 32 for k in range(33)]


def student_t_density(x, dof):
    return (math.gamma((dof + 1) / 2)
        / (math.sqrt(dof * math.pi) * math.gamma(dof / 2))
        * (1 + x * x / dof) ** (-(dof + 1) / 2))


def benchmark_spec(seed=0):
    return oracle.LongitudinalSpec(
        n_subjects=10,
        timepoints=5,
        lesion_range=(5, 20),
        seed=seed,
        phantom=oracle.PhantomSpec(
            dims=(40, 40, 40),
            n_lesions=0,
            noise_speckles=40,
            noise_amplitude=0.3,
            background_peak=0.6,
            ))


class LesionCountBenchmarkTestCase(unittest.TestCase):
    'Test Lesion Count against the slow references and synthetic studies'

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.directory = tempfile.TemporaryDirectory()
        cls.manifest = oracle.generate_longitudinal(benchmark_spec(),
            os.path.join(cls.directory.name, 'study'))

    @classmethod
    def tearDownClass(cls):
        cls.directory.cleanup()
        super().tearDownClass()

    def test_random_suite_matches_oracle(self):
        rng = np.random.default_rng(12)
        start = time.perf_counter()
        for _ in range(200):
            vol = oracle.random_quantized_volume(rng, max_dim=12)
            diagram = filtration.compute_persistence(vol)
            reference = oracle.brute_force_diagram(vol)
            self.assertEqual(diagram.essentials, reference.essentials)
            self.assertEqual(sorted(diagram.positive_dots()),
                sorted(reference.positive_dots()))

            counts = []
            for theta in QUANTIZED_GRID:
                count = filtration.pcount_merge(vol, theta).count
                self.assertEqual(count,
                    filtration.count_from_diagram(diagram, theta))
                self.assertEqual(count,
                    filtration.count_from_diagram(reference, theta))
                counts.append(count)
            self.assertEqual(counts, sorted(counts, reverse=True))

            for level in sorted(set(vol.data[vol.data > 0])):
                self.assertEqual(counting.direct_threshold_count(vol, level),
                    len(oracle.brute_force_components(vol, level)))
        self.assertLess(time.perf_counter() - start, 60)

    def test_disjoint_phantoms_add_up(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            a, b = (oracle.generate_phantom(oracle.PhantomSpec(
                        dims=(12, 12, 12), n_lesions=int(rng.integers(0, 3)),
                        lesion_radius_range=(1.5, 2.0), noise_speckles=5,
                        seed=2 * seed + k))[0]
                for k in range(2))
            values = np.zeros((25, 12, 12))
            values[:12] = a.array
            values[13:] = b.array
            combined = Volume.from_array(values)
            for vol in (a, b, combined):
                counts = counting.sweep_persistence(vol,
                    QUANTIZED_GRID).counts
                self.assertEqual(counts.tolist(),
                    sorted(counts, reverse=True))
            for theta in QUANTIZED_GRID:
                self.assertEqual(
                    filtration.pcount_merge(combined, theta).count,
                    filtration.pcount_merge(a, theta).count
                    + filtration.pcount_merge(b, theta).count)

    def test_persistence_beats_direct_threshold(self):
        theta_grid = counting.make_grid(0, 0.36, 0.04)
        start = time.perf_counter()
        for mode in calibration.MODES:
            report = calibration.compare_with_baseline(self.manifest, mode,
                theta_grid=theta_grid, folds=5, seed=0)
            self.assertLess(report.mean_mae, report.baseline.mean_mae, mode)
            if mode == calibration.UNSUPERVISED:
                self.assertLess(report.ttest[1], 0.05)
        self.assertLess(time.perf_counter() - start, 300)

    def test_persistence_counts_are_stable(self):
        persistence, direct = [], []
        for subject in self.manifest.subjects:
            for tp in subject.timepoints:
                vol = load_volume(tp.volume_path)
                persistence.append(counting.threshold_stability(
                        counting.sweep_persistence(vol)))
                direct.append(counting.threshold_stability(
                        counting.sweep_direct(vol)))
        self.assertLess(statistics.mean(persistence),
            statistics.mean(direct))

    def test_pcount_merge_speed(self):
        rng = np.random.default_rng(0)
        values = ndimage.gaussian_filter(rng.random((40, 80, 40)), 1.5)
        values = (values - values.min()) / (values.max() - values.min())
        vol = Volume.from_array(values)
        filtration.pcount_merge(vol, 0.02)
        timings = []
        for _ in range(5):
            start = time.perf_counter()
            filtration.pcount_merge(vol, 0.02)
            timings.append(time.perf_counter() - start)
        self.assertLess(statistics.median(timings), 1)

    def test_paired_ttest_against_integrated_density(self):
        t, p = calibration.paired_ttest([3, 1, 2, 4, 0], [1, 1, 1, 1, 1])
        tail, _ = integrate.quad(student_t_density, t, np.inf, args=(4,))
        self.assertAlmostEqual(t, math.sqrt(2), delta=1e-3)
        self.assertAlmostEqual(p, 2 * tail, delta=1e-3)
        self.assertAlmostEqual(p, 0.2302, delta=1e-3)

        rng = np.random.default_rng(1)
        for _ in range(10):
            a, b = rng.random(8), rng.random(8)
            t, p = calibration.paired_ttest(a, b)
            tail, _ = integrate.quad(student_t_density, abs(t), np.inf,
                args=(7,))
            self.assertAlmostEqual(p, 2 * tail, delta=1e-6)

    def test_count_table_ignores_jobs(self):
        serial = calibration.build_count_table(self.manifest, jobs=1)
        parallel = calibration.build_count_table(self.manifest, jobs=2)
        self.assertEqual(serial.subject_ids, parallel.subject_ids)
        for a, b in zip(serial.entries, parallel.entries):
            self.assertTrue(np.array_equal(a, b))

    def test_commands_are_deterministic(self):
        directory = self.directory.name
        manifest = os.path.join(directory, 'study', 'manifest.json')
        volume = self.manifest.subjects[0].timepoints[-1].volume_path
        runs = [
            ['diagram', '--input', volume, '--output', '%s/diagram.csv'],
            ['sweep', '--input', volume, '--method', 'threshold',
                '--output', '%s/sweep.csv'],
            ['trajectories', '--manifest', manifest, '--jobs', '2',
                '--output', '%s/trajectories.csv'],
            ['calibrate', '--manifest', manifest, '--mode', 'unsupervised',
                '--grid', '0:0.36:0.04', '--compare-baseline',
                '--output', '%s/report.json'],
            ['preprocess', '--input', volume, '--downsample', '2',
                '--output', '%s/small.json'],
            ]
        for run in range(2):
            out = os.path.join(directory, 'run%d' % run)
            os.makedirs(out)
            for argv in runs:
                self.assertEqual(main([a.replace('%s', out) for a in argv]),
                    0, argv)
        for name in sorted(os.listdir(os.path.join(directory, 'run0'))):
            with open(os.path.join(directory, 'run0', name), 'rb') as f:
                first = f.read()
            with open(os.path.join(directory, 'run1', name), 'rb') as f:
                self.assertEqual(f.read(), first, name)
