# This script compares persistence counting with direct thresholding on a
# seeded synthetic longitudinal study:
#
#   python scripts/phantom_benchmark.py [seed]

import sys
import tempfile
import time

import numpy as np

from trytond.modules.lesion_count import calibration, counting, oracle
from trytond.modules.lesion_count.volume_io import load_volume

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

spec = oracle.LongitudinalSpec(
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
theta_grid = counting.make_grid(0, 0.36, 0.04)

start = time.perf_counter()
with tempfile.TemporaryDirectory() as directory:
    print('Generating...')
    manifest = oracle.generate_longitudinal(spec, directory)

    for mode in calibration.MODES:
        report = calibration.compare_with_baseline(manifest, mode,
            theta_grid=theta_grid, folds=5, seed=seed)
        t, p = report.ttest
        print('%-12s persistence MAE %.3f (theta %.3f), '
            'threshold MAE %.3f (tau %.1f), t %.3f, p %.2e' % (mode,
                report.mean_mae, report.theta_star, report.baseline.mean_mae,
                report.baseline.theta_star, t, p))

    stability = {counting.PERSISTENCE: [], counting.DIRECT_THRESHOLD: []}
    for subject in manifest.subjects:
        for timepoint in subject.timepoints:
            vol = load_volume(timepoint.volume_path)
            for method in stability:
                stability[method].append(counting.threshold_stability(
                        counting.sweep(vol, method)))
    for method, values in stability.items():
        print('%-17s count std over default grid: %.3f' % (method,
                np.mean(values)))

print('Done in %.1fs' % (time.perf_counter() - start))
