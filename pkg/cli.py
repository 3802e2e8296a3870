# This file is part lesion_count module for Tryton.
# The COPYRIGHT file at the top level of this repository contains
# the full copyright notices and license terms.
"""Command line entry point: lesion-count COMMAND [options].

Results go to standard output (or --output files), logs to standard error.
Exit codes are 0 on success, 1 on runtime failures and 2 on usage errors.
"""
import argparse
import logging
import os
import sys

from trytond.config import config
from trytond.exceptions import UserError

from . import calibration, common, counting, filtration, oracle, volume_io

logger = logging.getLogger(__name__)

METHOD_NAMES = {
    'persistence': counting.PERSISTENCE,
    'threshold': counting.DIRECT_THRESHOLD,
    }


def _grid(text):
    try:
        return counting.parse_grid(text)
    except ValueError as exception:
        raise argparse.ArgumentTypeError(str(exception))


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        value = 0
    if value < 1:
        raise argparse.ArgumentTypeError(
            'expected a positive integer, got %r' % text)
    return value


def _unit_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError('expected a number, got %r' % text)
    if not 0 <= value < 1:
        raise argparse.ArgumentTypeError(
            'expected a value in [0, 1), got %r' % text)
    return value


def _int_tuple(text):
    try:
        return tuple(int(x) for x in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected comma separated integers, got %r' % text)


def _range(text):
    try:
        low, high = (float(x) for x in text.split(':'))
    except ValueError:
        raise argparse.ArgumentTypeError('expected LOW:HIGH, got %r' % text)
    if high < low:
        raise argparse.ArgumentTypeError('empty range %r' % text)
    return low, high


def _add_preprocessing(parser):
    parser.add_argument('--mask-eps', type=_unit_float, default=None,
        help='exclude voxels with p <= E from the graph')
    parser.add_argument('--crop', action='store_true',
        help='crop to the foreground bounding box first')
    parser.add_argument('--crop-eps', type=_unit_float, default=None)
    parser.add_argument('--downsample', type=_positive_int, default=1,
        metavar='N')


def get_parser():
    parser = argparse.ArgumentParser(prog='lesion-count',
        description='Count lesions in probability maps by persistence')
    parser.add_argument('--config', metavar='FILE',
        help='trytond configuration file with a [lesion_count] section')
    parser.add_argument('-v', '--verbose', action='store_true')
    subparsers = parser.add_subparsers(dest='command', required=True)

    count = subparsers.add_parser('count', help='count lesions of a volume')
    count.add_argument('--input', required=True)
    count.add_argument('--method', choices=METHOD_NAMES,
        default='persistence')
    count.add_argument('--theta', type=float)
    count.add_argument('--tau', type=float)
    count.add_argument('--labels-output', metavar='PATH',
        help='write the merged labelling as an int32 raw_json volume')
    _add_preprocessing(count)

    diagram = subparsers.add_parser('diagram',
        help='write the persistence diagram as CSV')
    diagram.add_argument('--input', required=True)
    diagram.add_argument('--output', required=True)
    _add_preprocessing(diagram)

    sweep = subparsers.add_parser('sweep',
        help='count over a threshold grid')
    sweep.add_argument('--input', required=True)
    sweep.add_argument('--method', choices=METHOD_NAMES,
        default='persistence')
    sweep.add_argument('--grid', type=_grid, metavar='A:B:STEP')
    sweep.add_argument('--output', required=True)
    _add_preprocessing(sweep)

    calibrate = subparsers.add_parser('calibrate',
        help='cross-validate the threshold on a longitudinal manifest')
    calibrate.add_argument('--manifest', required=True)
    calibrate.add_argument('--mode', choices=calibration.MODES,
        default=calibration.SUPERVISED)
    calibrate.add_argument('--method', choices=METHOD_NAMES,
        default='persistence')
    calibrate.add_argument('--grid', type=_grid, metavar='A:B:STEP')
    calibrate.add_argument('--baseline-grid', type=_grid, metavar='A:B:STEP',
        help='probability grid of the --compare-baseline run')
    calibrate.add_argument('--folds', type=_positive_int)
    calibrate.add_argument('--seed', type=int)
    calibrate.add_argument('--compare-baseline', action='store_true')
    calibrate.add_argument('--jobs', type=_positive_int)
    calibrate.add_argument('--output', help='report file, default stdout')
    _add_preprocessing(calibrate)

    trajectories = subparsers.add_parser('trajectories',
        help='write count-versus-time curves of a manifest')
    trajectories.add_argument('--manifest', required=True)
    trajectories.add_argument('--method', choices=METHOD_NAMES,
        default='persistence')
    trajectories.add_argument('--grid', type=_grid, metavar='A:B:STEP')
    trajectories.add_argument('--jobs', type=_positive_int)
    trajectories.add_argument('--output', required=True)
    _add_preprocessing(trajectories)

    phantom = subparsers.add_parser('phantom',
        help='generate a synthetic longitudinal dataset')
    phantom.add_argument('--subjects', type=_positive_int, required=True)
    phantom.add_argument('--timepoints', type=_positive_int, required=True)
    phantom.add_argument('--out', required=True)
    phantom.add_argument('--seed', type=int)
    phantom.add_argument('--lesions', type=_range, default=(5, 20),
        metavar='LOW:HIGH', help='range of the per-subject lesion counts')
    phantom.add_argument('--schedule', type=_int_tuple,
        help='comma separated lesion counts shared by all subjects')
    phantom.add_argument('--dims', type=_int_tuple, default=(32, 32, 32))
    phantom.add_argument('--radius', type=_range, default=(2.0, 3.0),
        metavar='LOW:HIGH')
    phantom.add_argument('--speckles', type=int, default=0)
    phantom.add_argument('--noise-amplitude', type=float, default=0.3)
    phantom.add_argument('--background-peak', type=float, default=0.0)
    phantom.add_argument('--background-sigma', type=float)

    preprocess = subparsers.add_parser('preprocess',
        help='crop and downsample a volume')
    preprocess.add_argument('--input', required=True)
    preprocess.add_argument('--output', required=True)
    preprocess.add_argument('--crop-eps', type=_unit_float, default=None)
    preprocess.add_argument('--downsample', type=_positive_int, default=1,
        metavar='N')
    preprocess.add_argument('--dtype', choices=('float32', 'float64'),
        default='float32')
    return parser


def _check_grid(parser, method, grid, option='--grid'):
    if grid is None:
        return
    try:
        counting.check_method_grid(METHOD_NAMES[method], grid)
    except ValueError as exception:
        parser.error('%s: %s' % (option, exception))


def _check_arguments(parser, args):
    "Flag combinations argparse cannot express"
    if args.command in ('sweep', 'calibrate', 'trajectories'):
        _check_grid(parser, args.method, args.grid)
    if args.command == 'count':
        if args.method == 'persistence' and args.tau is not None:
            parser.error('--tau is only valid with --method threshold')
        if args.method == 'threshold' and args.theta is not None:
            parser.error('--theta is only valid with --method persistence')
        if args.method == 'threshold' and args.labels_output:
            parser.error('--labels-output needs --method persistence')
        if args.theta is not None and not args.theta >= 0:
            parser.error('--theta must be >= 0')
        if args.tau is not None and not 0 < args.tau <= 1:
            parser.error('--tau must lie in (0, 1]')
    elif args.command == 'calibrate':
        if args.compare_baseline and args.method != 'persistence':
            parser.error('--compare-baseline needs --method persistence')
        _check_grid(parser, 'threshold', args.baseline_grid,
            '--baseline-grid')
    elif args.command == 'phantom':
        if args.timepoints < 2:
            parser.error('--timepoints must be at least 2')
        if args.schedule and len(args.schedule) != args.timepoints:
            parser.error('--schedule needs one count per timepoint')
        if len(args.dims) != 3:
            parser.error('--dims needs three integers')


def _load(args):
    vol = volume_io.load_volume(args.input)
    crop_eps = common.get_crop_eps() if args.crop_eps is None \
        else args.crop_eps
    return volume_io.preprocess(vol, crop=args.crop, crop_eps=crop_eps,
        factor=args.downsample)


def _mask_eps(args):
    return common.get_mask_eps() if args.mask_eps is None else args.mask_eps


def _preprocessing(args):
    return {
        'crop': args.crop,
        'crop_eps': (common.get_crop_eps() if args.crop_eps is None
            else args.crop_eps),
        'factor': args.downsample,
        }


def _write(text, path=None):
    if path:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_count(args):
    vol = _load(args)
    method = METHOD_NAMES[args.method]
    if method == counting.PERSISTENCE:
        threshold = common.get_theta() if args.theta is None else args.theta
        result = filtration.pcount_merge(vol, threshold, _mask_eps(args))
        count = result.count
        if args.labels_output:
            volume_io.write_raw_json(args.labels_output, vol.dims,
                vol.voxel_size_mm, result.labels, dtype='int32')
    else:
        threshold = common.get_tau() if args.tau is None else args.tau
        count = counting.direct_threshold_count(vol, threshold)
    _write(common.dump_json({
                'count': count,
                'method': method,
                'threshold': threshold,
                'dims': list(vol.dims),
                'voxel_size_mm': list(vol.voxel_size_mm),
                }))


def cmd_diagram(args):
    vol = _load(args)
    filtration.compute_persistence(vol, _mask_eps(args)).write_csv(
        args.output)


def cmd_sweep(args):
    vol = _load(args)
    counting.sweep(vol, METHOD_NAMES[args.method], args.grid,
        _mask_eps(args)).write_csv(args.output)


def cmd_calibrate(args):
    manifest = calibration.load_manifest(args.manifest)
    folds = common.get_folds() if args.folds is None else args.folds
    seed = common.get_seed() if args.seed is None else args.seed
    jobs = common.get_jobs() if args.jobs is None else args.jobs
    if args.compare_baseline:
        report = calibration.compare_with_baseline(manifest, args.mode,
            args.grid, args.baseline_grid, folds, seed, _mask_eps(args),
            jobs, **_preprocessing(args))
    else:
        report = calibration.cross_validate(manifest, args.grid, args.mode,
            folds, seed, METHOD_NAMES[args.method], _mask_eps(args), jobs,
            **_preprocessing(args))
    _write(report.write(), args.output)


def cmd_trajectories(args):
    manifest = calibration.load_manifest(args.manifest)
    jobs = common.get_jobs() if args.jobs is None else args.jobs
    table = calibration.build_count_table(manifest, args.grid,
        METHOD_NAMES[args.method], _mask_eps(args), jobs,
        **_preprocessing(args))
    calibration.write_trajectories_csv(table, args.output)


def cmd_phantom(args):
    seed = common.get_seed() if args.seed is None else args.seed
    spec = oracle.LongitudinalSpec(
        n_subjects=args.subjects,
        timepoints=args.timepoints,
        lesion_schedule=args.schedule,
        lesion_range=tuple(int(x) for x in args.lesions),
        seed=seed,
        phantom=oracle.PhantomSpec(
            dims=args.dims,
            n_lesions=0,
            lesion_radius_range=args.radius,
            noise_speckles=args.speckles,
            noise_amplitude=args.noise_amplitude,
            background_peak=args.background_peak,
            background_sigma=args.background_sigma,
            max_retries=common.get_max_retries()))
    manifest = oracle.generate_longitudinal(spec, args.out)
    _write(common.dump_json({
                'manifest': os.path.join(args.out, 'manifest.json'),
                'subjects': len(manifest.subjects),
                'volumes': sum(len(s.timepoints) for s in manifest.subjects),
                }))


def cmd_preprocess(args):
    vol = volume_io.load_volume(args.input)
    crop_eps = common.get_crop_eps() if args.crop_eps is None \
        else args.crop_eps
    vol = volume_io.preprocess(vol, crop=True, crop_eps=crop_eps,
        factor=args.downsample)
    volume_io.save_volume(vol, args.output, dtype=args.dtype)


COMMANDS = {
    'count': cmd_count,
    'diagram': cmd_diagram,
    'sweep': cmd_sweep,
    'calibrate': cmd_calibrate,
    'trajectories': cmd_trajectories,
    'phantom': cmd_phantom,
    'preprocess': cmd_preprocess,
    }


def main(argv=None):
    parser = get_parser()
    try:
        args = parser.parse_args(argv)
        _check_arguments(parser, args)
    except SystemExit as exception:
        return exception.code

    logging.basicConfig(stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    if args.config:
        config.update_etc(args.config)

    try:
        COMMANDS[args.command](args)
    except UserError as exception:
        message = exception.message
        if exception.description:
            message = '%s: %s' % (message, exception.description)
        sys.stderr.write('error: %s\n' % message)
        return 1
    except (OSError, ValueError) as exception:
        sys.stderr.write('error: %s\n' % exception)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
