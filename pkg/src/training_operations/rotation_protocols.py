"""
Rotation protocol experiment and robustness sweeps
"""
from dataclasses import dataclass, replace
from typing import List, Sequence

from src.services.classifier import PointCloudClassifier
from src.services.pointcloud_io import RotationMode, jitter
from src.setup.generate_dataset import TEST_SPLIT, build_synthetic_clouds
from src.training_operations.evaluate import evaluate
from src.training_operations.train import train
from src.utils.random_streams import RandomStream
from src.utils.run_reporter import run_reporter

NOISE_STREAM = 5
PROTOCOL_MODES = (RotationMode.NONE, RotationMode.AZIMUTHAL_Z, RotationMode.UNIFORM_SO3)


@dataclass(frozen=True)
class ProtocolRow:
    train_rotation: str
    test_rotation: str
    accuracy: float


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    accuracy: float


def rotate_test(model_config, train_config, train_clouds, test_clouds, seed=None, val_clouds=None):
    """
    Trains one model with z-axis augmentation and evaluates it with no
    rotation, z rotations and arbitrary rotations

    Returns:
        (trained model, [ProtocolRow] for none, z, so3)
    """
    train_config = replace(train_config, rotation=RotationMode.AZIMUTHAL_Z.value)
    seed = train_config.seed if seed is None else seed
    model = PointCloudClassifier(model_config)
    run_reporter.log_substep('Rotation protocol', 'train z, test none / z / so3', 'processing')
    train(model, train_clouds, train_config, val_clouds)

    rows = []
    for mode in PROTOCOL_MODES:
        report = evaluate(model, test_clouds, mode, seed)
        rows.append(ProtocolRow(train_config.rotation, mode.value, report.accuracy))
        run_reporter.log_substep(f'z/{mode.value}', f'accuracy {report.accuracy:.3f}', 'success')
    return model, rows


def noise_sweep(model, clouds, sigmas: Sequence[float], seed=0) -> List[SweepRow]:
    """Accuracy after extra Gaussian jitter of each standard deviation"""
    rows = []
    for sweep_index, sigma in enumerate(sigmas):
        noisy = [jitter(cloud, sigma, RandomStream(seed, NOISE_STREAM, sweep_index, i))
                 for i, cloud in enumerate(clouds)]
        report = evaluate(model, noisy, RotationMode.NONE, seed)
        rows.append(SweepRow('jitter', float(sigma), report.accuracy))
        run_reporter.log_substep(f'sigma={sigma:g}', f'accuracy {report.accuracy:.3f}', 'info')
    return rows


def point_sweep(model, classes, per_class, point_counts: Sequence[int], seed=0, jitter_sigma=0.0):
    """Accuracy on freshly sampled test shapes at each point count"""
    rows = []
    for count in point_counts:
        clouds = build_synthetic_clouds(classes, per_class, int(count), seed, jitter_sigma, TEST_SPLIT)
        report = evaluate(model, clouds, RotationMode.NONE, seed)
        rows.append(SweepRow('points', float(count), report.accuracy))
        run_reporter.log_substep(f'N={count}', f'accuracy {report.accuracy:.3f}', 'info')
    return rows


def pressure_test(model, clouds, sigmas, classes=None, per_class=0, point_counts=(), seed=0,
                  jitter_sigma=0.0):
    """Noise sweep over `clouds`, then (when classes are given) a point-count sweep"""
    rows = noise_sweep(model, clouds, sigmas, seed)
    if classes and per_class > 0 and point_counts:
        rows += point_sweep(model, classes, per_class, point_counts, seed, jitter_sigma)
    return rows
