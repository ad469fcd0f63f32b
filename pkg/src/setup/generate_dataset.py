#!/usr/bin/env python3
"""
Synthetic dataset provisioning: per-class XYZ files plus manifests

Layout under the output directory:
    <class>/<class>_0000.xyz ...     training clouds
    manifest.tsv                     "relative/path<TAB>label", one line per cloud
    test/<class>/<class>_0000.xyz    held-out clouds (only with test_per_class > 0)
    test_manifest.tsv
Labels are positions in the class list.
"""
import sys
import os
from pathlib import Path

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from src.config.settings import DEFAULT_JITTER, DEFAULT_POINTS, DEFAULT_SEED, DEFAULT_SHAPE_CLASSES, MANIFEST_NAME
from src.services.pointcloud_io import ShapeKind, SyntheticShapeSpec, generate_shape, write_manifest, write_xyz
from src.utils.random_streams import derived_seed
from src.utils.run_reporter import run_reporter

TRAIN_SPLIT = 0
TEST_SPLIT = 1
TEST_MANIFEST_NAME = 'test_' + MANIFEST_NAME


def parse_classes(names):
    """Comma-separated or list of shape names -> ShapeKind tuple; unknown names raise ValueError"""
    if isinstance(names, str):
        names = [n for n in names.replace(' ', '').split(',') if n]
    kinds = []
    for name in names:
        try:
            kinds.append(ShapeKind(name))
        except ValueError:
            valid = ', '.join(kind.value for kind in ShapeKind)
            raise ValueError(f'unknown class {name!r} (choose from {valid})') from None
    if not kinds:
        raise ValueError('at least one class is required')
    if len(set(kinds)) != len(kinds):
        raise ValueError('class list contains duplicates')
    return tuple(kinds)


def build_synthetic_clouds(classes, per_class, num_points, seed, jitter_sigma, split=TRAIN_SPLIT):
    """Class-major list of labelled clouds; every cloud has its own derived seed"""
    clouds = []
    for label, kind in enumerate(parse_classes(classes)):
        for index in range(per_class):
            spec = SyntheticShapeSpec(kind, num_points, derived_seed(seed, split, label, index), jitter_sigma)
            clouds.append(generate_shape(spec, label=label))
    return clouds


def _write_split(root, prefix, classes, clouds, per_class):
    entries = []
    for position, cloud in enumerate(clouds):
        kind = classes[cloud.label]
        relative = Path(prefix) / kind.value / f'{kind.value}_{position % per_class:04d}.xyz'
        target = root / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        write_xyz(cloud, target)
        entries.append((relative, cloud.label))
    return entries


def generate_dataset(out_dir, classes=DEFAULT_SHAPE_CLASSES, per_class=20, num_points=DEFAULT_POINTS,
                     seed=DEFAULT_SEED, jitter_sigma=DEFAULT_JITTER, test_per_class=0):
    """
    Writes the synthetic dataset and returns the manifest paths

    Returns:
        dict with 'train' and, when test_per_class > 0, 'test' manifest paths
    """
    classes = parse_classes(classes)
    if per_class < 1:
        raise ValueError(f'--per-class must be >= 1, got {per_class}')
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    run_reporter.log_substep('Generating training split',
                             f'{len(classes)} classes x {per_class} clouds x {num_points} points', 'processing')
    train_clouds = build_synthetic_clouds(classes, per_class, num_points, seed, jitter_sigma, TRAIN_SPLIT)
    manifests = {'train': root / MANIFEST_NAME}
    write_manifest(manifests['train'], _write_split(root, '.', classes, train_clouds, per_class))

    if test_per_class > 0:
        run_reporter.log_substep('Generating test split', f'{test_per_class} clouds per class', 'processing')
        test_clouds = build_synthetic_clouds(classes, test_per_class, num_points, seed, jitter_sigma, TEST_SPLIT)
        manifests['test'] = root / TEST_MANIFEST_NAME
        write_manifest(manifests['test'], _write_split(root, 'test', classes, test_clouds, test_per_class))

    for split, path in manifests.items():
        run_reporter.log_substep(f'{split} manifest written', str(path), 'success')
    return manifests


def main():
    """Standalone entry point, same flags as `main.py gen-data`"""
    import argparse

    parser = argparse.ArgumentParser(description='Generate the synthetic shape dataset')
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--classes', default=','.join(DEFAULT_SHAPE_CLASSES))
    parser.add_argument('--per-class', type=int, default=20)
    parser.add_argument('--test-per-class', type=int, default=0)
    parser.add_argument('--points', type=int, default=DEFAULT_POINTS)
    parser.add_argument('--seed', type=int, default=DEFAULT_SEED)
    parser.add_argument('--jitter', type=float, default=DEFAULT_JITTER)
    args = parser.parse_args()

    try:
        generate_dataset(args.out, args.classes, args.per_class, args.points, args.seed,
                         args.jitter, args.test_per_class)
    except ValueError as e:
        print(f'❌ {e}', file=sys.stderr)
        sys.exit(1)
    except OSError as e:
        print(f'❌ Cannot write dataset: {e}', file=sys.stderr)
        sys.exit(2)


if __name__ == '__main__':
    main()
