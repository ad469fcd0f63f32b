"""
Mini-batch training with momentum SGD, class weighting, inverted dropout and
rotation augmentation. Optional robustness copies add resampled and re-jittered
versions of every training cloud before geometry is cached.
"""
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from src.config.settings import METRICS_COLUMNS
from src.services.batch_operations import batch_operations_service
from src.services.classifier import class_weights_from_labels, l2_penalty, loss
from src.services.pointcloud_io import RotationMode, jitter, random_rotation
from src.services.pooling import uniform_sample
from src.utils.errors import ManifestError, NumericalError
from src.utils.random_streams import RandomStream
from src.utils.run_reporter import run_reporter
from src.utils.text_format import write_csv_header, write_csv_rows

# stream keys under the run seed
SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2
AUGMENT_STREAM = 3
ROBUSTNESS_STREAM = 7


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float

    def as_row(self):
        return (self.epoch, self.train_loss, self.train_acc, self.val_acc)


@dataclass
class TrainingResult:
    model: object
    metrics: List[EpochMetrics]

    @property
    def final(self):
        return self.metrics[-1]


def check_labels(clouds, num_classes, what='dataset'):
    """Rejects empty datasets and labels outside [0, num_classes)"""
    if not clouds:
        raise ManifestError(f'{what} is empty')
    for index, cloud in enumerate(clouds):
        if cloud.label is None:
            raise ManifestError(f'{what} sample {index} has no label')
        if not 0 <= cloud.label < num_classes:
            raise ManifestError(
                f'{what} sample {index} has label {cloud.label}, model has {num_classes} classes'
            )


def robustness_copies(clouds, train_config, min_points=2):
    """
    Extra training clouds: one uniform resample per subsample ratio and one
    re-jittered copy per sigma, each keyed by its own stream

    Resampled copies keep at least `min_points` points.
    """
    extra = []
    for r, ratio in enumerate(train_config.subsample_ratios):
        for i, cloud in enumerate(clouds):
            count = min(cloud.num_points, max(min_points, int(round(ratio * cloud.num_points))))
            stream = RandomStream(train_config.seed, ROBUSTNESS_STREAM, 0, r, i)
            kept = uniform_sample(cloud.num_points, count, stream)
            extra.append(cloud.take(np.sort(kept)))
    for s, sigma in enumerate(train_config.jitter_copies):
        for i, cloud in enumerate(clouds):
            extra.append(jitter(cloud, sigma, RandomStream(train_config.seed, ROBUSTNESS_STREAM, 1, s, i)))
    return extra


def prepare_all(model, clouds, description='Preparing geometry'):
    """Graph, TI features and pooling plans of every cloud, in input order"""
    prepared = batch_operations_service.map_ordered(model.prepare, clouds)
    run_reporter.log_substep(description, f'{len(prepared)} clouds', 'success')
    return prepared


def prepared_accuracy(model, prepared):
    """Evaluation-mode accuracy over prepared clouds (no augmentation, no dropout)"""
    if not prepared:
        return float('nan')

    def predict(item):
        return int(np.argmax(model.forward_prepared(item).logits)) == item.label

    hits = batch_operations_service.map_ordered(predict, prepared)
    return float(np.mean(hits))


def _initial_metrics(model, prepared, weights, val_prepared):
    def evaluate_one(item):
        logits = model.forward_prepared(item).logits
        value = loss(logits, item.label, weights)
        return value, int(np.argmax(logits)) == item.label

    results = batch_operations_service.map_ordered(evaluate_one, prepared)
    train_loss = float(np.mean([r[0] for r in results])) + l2_penalty(model.parameters(), model.config.l2)
    train_acc = float(np.mean([r[1] for r in results]))
    return EpochMetrics(0, train_loss, train_acc, prepared_accuracy(model, val_prepared))


def _sample_job(model, train_config, weights, epoch):
    mode = RotationMode(train_config.rotation)

    def job(indexed):
        index, item = indexed
        rotation = None
        if mode != RotationMode.NONE:
            rotation = random_rotation(RandomStream(train_config.seed, AUGMENT_STREAM, epoch, index), mode).rotation
        dropout = RandomStream(train_config.seed, DROPOUT_STREAM, epoch, index)
        value, grads, trace = model.gradients(item, item.label, weights, rotation, dropout)
        return value, grads, int(np.argmax(trace.logits)) == item.label

    return job


def _apply_update(params, velocity, grads, learning_rate, momentum):
    for name, value in params.items():
        velocity[name] *= momentum
        velocity[name] -= learning_rate * grads[name]
        value += velocity[name]


def train(model, clouds, train_config, val_clouds=None, metrics_stream=None):
    """
    Trains `model` in place

    Args:
        model: PointCloudClassifier
        clouds: labelled training clouds
        train_config: TrainConfig
        val_clouds: optional held-out clouds for val_acc (nan without them)
        metrics_stream: text stream receiving the metrics CSV as epochs finish

    Returns:
        TrainingResult with one EpochMetrics per epoch, epoch 0 being the
        untrained model
    """
    num_classes = model.config.num_classes
    check_labels(clouds, num_classes, 'training set')
    if val_clouds:
        check_labels(val_clouds, num_classes, 'validation set')

    run_reporter.log_step(1, 'Preparing Data', 'Building graphs, TI features and pooling plans')
    extra = robustness_copies(clouds, train_config, model.config.knn_k + 1)
    if extra:
        run_reporter.log_substep('Robustness copies', f'{len(extra)} extra clouds', 'info')
        clouds = list(clouds) + extra
    prepared = prepare_all(model, clouds)
    val_prepared = prepare_all(model, val_clouds or [], 'Preparing validation geometry')

    labels = [cloud.label for cloud in clouds]
    weights = class_weights_from_labels(labels, num_classes) if train_config.class_weighting else None

    if metrics_stream is not None:
        write_csv_header(metrics_stream, METRICS_COLUMNS)

    metrics = [_initial_metrics(model, prepared, weights, val_prepared)]
    _emit(metrics[-1], metrics_stream)

    params = model.parameters()
    velocity = {name: np.zeros_like(value) for name, value in params.items()}
    n = len(prepared)

    run_reporter.log_step(2, 'Training', f'{train_config.epochs} epochs, batch size {train_config.batch_size}')
    for epoch in run_reporter.progress(range(1, train_config.epochs + 1), 'Epochs', train_config.epochs):
        order = RandomStream(train_config.seed, SHUFFLE_STREAM, epoch).permutation(n)
        job = _sample_job(model, train_config, weights, epoch)
        losses, hits = [], []
        for start in range(0, n, train_config.batch_size):
            batch = [(int(i), prepared[int(i)]) for i in order[start:start + train_config.batch_size]]
            results = batch_operations_service.map_ordered(job, batch)

            # fixed sample order keeps the reduction schedule-independent
            grads = {name: np.zeros_like(value) for name, value in params.items()}
            for value, sample_grads, hit in results:
                losses.append(value)
                hits.append(hit)
                for name in grads:
                    grads[name] += sample_grads[name]
            for name in grads:
                grads[name] /= len(batch)
                if not np.all(np.isfinite(grads[name])):
                    raise NumericalError(f'non-finite gradient for {name} in epoch {epoch}')
            _apply_update(params, velocity, grads, train_config.learning_rate, train_config.momentum)

        train_loss = float(np.mean(losses))
        if not math.isfinite(train_loss):
            raise NumericalError(f'non-finite training loss in epoch {epoch}')
        metrics.append(EpochMetrics(epoch, train_loss, float(np.mean(hits)),
                                    prepared_accuracy(model, val_prepared)))
        run_reporter.record_epoch(*metrics[-1].as_row())
        _emit(metrics[-1], metrics_stream)

    last = metrics[-1]
    run_reporter.log_substep('Training finished',
                             f'loss {last.train_loss:.4f}, train acc {last.train_acc:.3f}, val acc {last.val_acc:.3f}',
                             'success')
    return TrainingResult(model, metrics)


def _emit(row, metrics_stream):
    if metrics_stream is not None:
        write_csv_rows(metrics_stream, [row.as_row()])
        metrics_stream.flush()
