#!/usr/bin/env python3
"""
Transform-invariant point cloud classification

Command line for the full pipeline:
- ✅ gen-data     synthetic shape dataset + manifests
- ✅ encode       TI feature table (and graph edge list) of one cloud
- ✅ coarsen      TI-score / uniform / farthest-point downsampling of one cloud
- ✅ train        mini-batch training, metrics CSV, checkpoint
- ✅ eval         accuracy, per-class accuracy and confusion matrix under a rotation mode
- ✅ rotate-test  train with z rotations, test with none / z / so3
- ✅ pressure     accuracy under growing jitter and shrinking point counts
- ✅ bench        graph / encode / forward timings and parameter count

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
CSV tables go to stdout; progress and diagnostics go to stderr.
"""

import argparse
import sys
import os

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from src.config import settings
from src.services.batch_operations import batch_operations_service
from src.utils.errors import NumericalError, TiNetError
from src.utils.run_reporter import run_reporter
from src.utils.text_format import write_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_INTERRUPTED = 130


class UsageError(Exception):
    """Bad flag values detected after parsing"""


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f'{self.prog}: error: {message}', file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _int_list(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated integers, got {text!r}') from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated numbers, got {text!r}') from None


# ------------------------------------------ CONFIG ------------------------------------------

def read_flat_config(path):
    """Flat `key: value` YAML experiment file"""
    mapping = settings.load_yaml_file(path) or {}
    if not isinstance(mapping, dict):
        raise UsageError(f'{path}: expected a flat key: value mapping')
    nested = [key for key, value in mapping.items() if isinstance(value, dict)]
    if nested:
        raise UsageError(f'{path}: nested sections are not allowed ({", ".join(nested)})')
    return mapping


def experiment_configs(args, clouds=None):
    """(ModelConfig, TrainConfig) from --config, command flags and --seed"""
    from src.services.classifier import ModelConfig, TrainConfig, split_flat_mapping

    mapping = read_flat_config(args.config) if getattr(args, 'config', None) else {}
    try:
        model_values, train_values = split_flat_mapping(mapping)
    except ValueError as e:
        raise UsageError(str(e)) from None

    if getattr(args, 'num_classes', None):
        model_values['num_classes'] = args.num_classes
    elif 'num_classes' not in model_values and clouds:
        model_values['num_classes'] = max(2, max(cloud.label for cloud in clouds) + 1)
    if getattr(args, 'input_mode', None):
        model_values['input_mode'] = args.input_mode
    preset = getattr(args, 'preset', None)
    if preset:
        model_values.setdefault('pool_after', () if preset == 'baseline' else (0,))
    if args.seed_given:
        train_values['seed'] = args.seed
        model_values.setdefault('init_seed', args.seed)
    for flag in ('epochs', 'batch_size', 'learning_rate'):
        if getattr(args, flag, None) is not None:
            train_values[flag] = getattr(args, flag)
    if args.command == 'train' and getattr(args, 'mode', None):
        train_values['rotation'] = args.mode

    try:
        return ModelConfig.from_mapping(model_values), TrainConfig.from_mapping(train_values)
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None


# ----------------------------------------- COMMANDS -----------------------------------------

def cmd_gen_data(args):
    from src.setup.generate_dataset import generate_dataset, parse_classes

    try:
        classes = parse_classes(args.classes)
    except ValueError as e:
        raise UsageError(str(e)) from None
    run_reporter.log_step(1, 'Generating Dataset', f'{len(classes)} classes into {args.out}')
    manifests = generate_dataset(args.out, classes, args.per_class, args.points, args.seed,
                                 args.jitter, args.test_per_class)
    for split, path in manifests.items():
        run_reporter.record_artifact(f'{split} manifest', str(path))


def cmd_encode(args):
    from src.utilities.feature_dumps import encode_file

    run_reporter.log_step(1, 'Encoding', f'k={args.k}, K={args.K}')
    encode_file(args.input, args.out, args.k, args.K, args.l2_normalize, args.graph_out,
                args.include_order_zero)
    run_reporter.record_artifact('features', args.out)


def cmd_coarsen(args):
    from src.utilities.feature_dumps import coarsen_file

    run_reporter.log_step(1, 'Coarsening', f'{args.sampler} sampler keeping {args.keep} points')
    coarsen_file(args.input, args.out, args.keep, args.sampler, args.k, args.cluster_size, args.seed)
    run_reporter.record_artifact('coarsened cloud', args.out)


def cmd_train(args):
    from src.services.checkpoint_store import save_checkpoint
    from src.services.classifier import PointCloudClassifier
    from src.services.pointcloud_io import load_dataset
    from src.training_operations.train import train

    run_reporter.log_substep('Loading dataset', args.manifest, 'processing')
    clouds = load_dataset(args.manifest)
    val_clouds = load_dataset(args.val_manifest) if args.val_manifest else None
    model_config, train_config = experiment_configs(args, clouds)
    model = PointCloudClassifier(model_config)
    run_reporter.log_substep('Model built', f'{model.parameter_count()} parameters', 'success')

    if args.metrics:
        with open(args.metrics, 'w') as metrics_stream:
            result = train(model, clouds, train_config, val_clouds, metrics_stream)
        run_reporter.record_artifact('metrics', args.metrics)
    else:
        result = train(model, clouds, train_config, val_clouds, sys.stdout)
    if args.ckpt:
        save_checkpoint(model, args.ckpt, epoch=result.final.epoch, seed=train_config.seed)
        run_reporter.record_artifact('checkpoint', args.ckpt)


def print_evaluation(report, stream=None):
    """Per-class accuracy table, then the confusion matrix"""
    stream = stream or sys.stdout
    per_class = report.per_class_accuracy
    totals = report.confusion.sum(axis=1)
    rows = [(c, int(totals[c]), int(report.confusion[c, c]), float(per_class[c]))
            for c in range(report.confusion.shape[0])]
    rows.append(('all', report.num_samples, int((report.predictions == report.labels).sum()), report.accuracy))
    write_csv(stream, ('class', 'samples', 'correct', 'accuracy'), rows)
    stream.write('\n')
    size = report.confusion.shape[0]
    write_csv(stream, ['true'] + [f'pred_{c}' for c in range(size)],
              [[c] + [int(v) for v in report.confusion[c]] for c in range(size)])


def cmd_eval(args):
    from src.services.checkpoint_store import load_checkpoint
    from src.training_operations.evaluate import evaluate_manifest, write_descriptors

    model, checkpoint = load_checkpoint(args.ckpt)
    run_reporter.log_substep('Checkpoint loaded', f'{args.ckpt} (epoch {checkpoint.epoch})', 'success')
    run_reporter.log_step(1, 'Evaluating', f'{args.manifest}, rotation {args.mode}')
    report = evaluate_manifest(model, args.manifest, args.mode, args.seed, keep_descriptors=bool(args.descriptors))
    print_evaluation(report)
    if args.descriptors:
        write_descriptors(report, args.descriptors)
        run_reporter.record_artifact('descriptors', args.descriptors)


def cmd_rotate_test(args):
    from src.services.checkpoint_store import save_checkpoint
    from src.services.pointcloud_io import load_dataset
    from src.training_operations.rotation_protocols import rotate_test

    clouds = load_dataset(args.manifest)
    test_clouds = load_dataset(args.test_manifest) if args.test_manifest else clouds
    model_config, train_config = experiment_configs(args, clouds)
    run_reporter.log_step(1, 'Rotation Protocol', 'train z, evaluate none / z / so3')
    model, rows = rotate_test(model_config, train_config, clouds, test_clouds)
    write_csv(sys.stdout, ('train_rotation', 'test_rotation', 'accuracy'),
              [(r.train_rotation, r.test_rotation, r.accuracy) for r in rows])
    if args.ckpt:
        save_checkpoint(model, args.ckpt, epoch=train_config.epochs, seed=train_config.seed)
        run_reporter.record_artifact('checkpoint', args.ckpt)


def cmd_pressure(args):
    from src.services.checkpoint_store import load_checkpoint
    from src.services.pointcloud_io import load_dataset
    from src.setup.generate_dataset import parse_classes
    from src.training_operations.rotation_protocols import pressure_test

    model, _ = load_checkpoint(args.ckpt)
    clouds = load_dataset(args.manifest)
    classes = None
    if args.classes:
        try:
            classes = parse_classes(args.classes)
        except ValueError as e:
            raise UsageError(str(e)) from None
    run_reporter.log_step(1, 'Pressure Test', 'jitter sweep and point-count sweep')
    rows = pressure_test(model, clouds, args.sigmas, classes, args.per_class, args.points or (),
                         args.seed, args.jitter)
    write_csv(sys.stdout, ('parameter', 'value', 'accuracy'),
              [(r.parameter, r.value, r.accuracy) for r in rows])


def cmd_bench(args):
    from src.training_operations.bench import BENCH_COLUMNS, bench

    model_config = None
    if args.config:
        model_config, _ = experiment_configs(args)
    if args.repeat < 1:
        raise UsageError('--repeat must be >= 1')
    run_reporter.log_step(1, 'Benchmark', f'{args.repeat} repeats per timing, median reported')
    rows = bench(args.points, args.k, args.repeat, args.seed, model_config)
    write_csv(sys.stdout, BENCH_COLUMNS, [row.as_row() for row in rows])


COMMANDS = {
    'gen-data': cmd_gen_data,
    'encode': cmd_encode,
    'coarsen': cmd_coarsen,
    'train': cmd_train,
    'eval': cmd_eval,
    'rotate-test': cmd_rotate_test,
    'pressure': cmd_pressure,
    'bench': cmd_bench,
}


# ------------------------------------------ PARSER ------------------------------------------

def build_parser():
    common = CliParser(add_help=False)
    common.add_argument('--seed', type=int,
                        help=f'Seed for every random draw of the command (default {settings.DEFAULT_SEED})')
    common.add_argument('--threads', type=int, default=settings.DEFAULT_THREADS,
                        help='Worker threads for per-sample work')
    common.add_argument('--quiet', '-q', action='store_true', help='No progress output on stderr')
    common.add_argument('--verbose', '-v', action='store_true', help='Print tracebacks on failure')
    common.add_argument('--report', help='Save the recorded run (steps, epochs, evaluations, errors) as JSON')

    model_flags = CliParser(add_help=False)
    model_flags.add_argument('--config', help='Flat YAML file of ModelConfig / TrainConfig fields')
    model_flags.add_argument('--preset', choices=('baseline', 'full'),
                             help='Architecture without / with a pooling stage')
    model_flags.add_argument('--input-mode', choices=('ti_features', 'raw_coordinates'))
    model_flags.add_argument('--num-classes', type=int)
    model_flags.add_argument('--epochs', type=int)
    model_flags.add_argument('--batch-size', type=int)
    model_flags.add_argument('--learning-rate', type=float)

    parser = CliParser(description='Transform-invariant point cloud classification')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('gen-data', parents=[common], help='Generate the synthetic shape dataset')
    p.add_argument('--out', required=True)
    p.add_argument('--classes', default=','.join(settings.DEFAULT_SHAPE_CLASSES))
    p.add_argument('--per-class', type=int, default=20)
    p.add_argument('--test-per-class', type=int, default=0)
    p.add_argument('--points', type=int, default=settings.DEFAULT_POINTS)
    p.add_argument('--jitter', type=float, default=settings.DEFAULT_JITTER)

    p = sub.add_parser('encode', parents=[common], help='Dump the TI feature table of a cloud')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--k', type=int, default=settings.DEFAULT_KNN_K)
    p.add_argument('--K', type=int, default=settings.DEFAULT_TI_ORDER)
    p.add_argument('--l2-normalize', action='store_true', help='Scale the table to unit Frobenius norm')
    p.add_argument('--include-order-zero', action='store_true')
    p.add_argument('--graph-out', help='Also write the "i j w" edge list')

    p = sub.add_parser('coarsen', parents=[common], help='Downsample a cloud')
    p.add_argument('--in', dest='input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--keep', type=int, required=True)
    p.add_argument('--sampler', choices=('ti', 'uniform', 'fps'), default='ti')
    p.add_argument('--k', type=int, default=settings.DEFAULT_KNN_K)
    p.add_argument('--cluster-size', type=int, default=settings.DEFAULT_CLUSTER_SIZE)

    p = sub.add_parser('train', parents=[common, model_flags], help='Train a classifier')
    p.add_argument('--manifest', required=True)
    p.add_argument('--val-manifest')
    p.add_argument('--ckpt')
    p.add_argument('--metrics', help='Metrics CSV path (default stdout)')
    p.add_argument('--mode', choices=('none', 'z', 'so3'), help='Training rotation augmentation')

    p = sub.add_parser('eval', parents=[common], help='Evaluate a checkpoint')
    p.add_argument('--manifest', required=True)
    p.add_argument('--ckpt', required=True)
    p.add_argument('--mode', choices=('none', 'z', 'so3'), default='none')
    p.add_argument('--descriptors', help='Write global descriptors to this file')

    p = sub.add_parser('rotate-test', parents=[common, model_flags], help='z/z, z/SO(3) protocol')
    p.add_argument('--manifest', required=True)
    p.add_argument('--test-manifest')
    p.add_argument('--ckpt', help='Save the trained model here')

    p = sub.add_parser('pressure', parents=[common], help='Noise and point-count robustness')
    p.add_argument('--manifest', required=True)
    p.add_argument('--ckpt', required=True)
    p.add_argument('--sigmas', type=_float_list, default=[0.0, 0.01, 0.02, 0.05, 0.1])
    p.add_argument('--points', type=_int_list, help='Point counts for resampled test shapes')
    p.add_argument('--classes', help='Shape classes for the point-count sweep')
    p.add_argument('--per-class', type=int, default=10)
    p.add_argument('--jitter', type=float, default=0.0)

    p = sub.add_parser('bench', parents=[common], help='Timing table')
    p.add_argument('--points', type=_int_list, default=[1024])
    p.add_argument('--k', type=_int_list, default=[settings.DEFAULT_KNN_K])
    p.add_argument('--repeat', type=int, default=3)
    p.add_argument('--config', help='Flat YAML model config')
    return parser


def main(argv=None):
    """Parse, run one command, map failures to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if not args.seed_given:
        args.seed = settings.DEFAULT_SEED

    run_reporter.configure(enabled=not args.quiet)
    try:
        batch_operations_service.configure(args.threads)
    except ValueError as e:
        parser.error(str(e))

    run_reporter.start_run(args.command)
    code = _run_command(parser, args)
    if args.report:
        run_reporter.save_run_report(args.report)
    return code


def _run_command(parser, args):
    try:
        COMMANDS[args.command](args)
        run_reporter.end_run(success=True)
        return EXIT_OK
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f'❌ {e}', file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print('\n⏹️  Interrupted by user', file=sys.stderr)
        return EXIT_INTERRUPTED
    except NumericalError as e:
        return _fail(args, 'numeric', e, EXIT_NUMERIC)
    except (TiNetError, OSError) as e:
        return _fail(args, 'data', e, EXIT_DATA)
    except ValueError as e:
        # parameter ranges checked inside the library (negative sigma, bad keep count)
        return _fail(args, 'usage', e, EXIT_USAGE)


def _fail(args, kind, error, code):
    run_reporter.record_error(type(error).__name__, str(error))
    run_reporter.end_run(success=False)
    print(f'❌ {args.command} failed with {kind} error: {error}', file=sys.stderr)
    if args.verbose:
        import traceback
        traceback.print_exc()
    else:
        print('💡 Run with --verbose for the full traceback', file=sys.stderr)
    return code


if __name__ == '__main__':
    sys.exit(main())
