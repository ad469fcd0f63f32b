"""
Evaluation under rotation protocols, with per-class accuracy and confusion matrix
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.services.batch_operations import batch_operations_service
from src.services.pointcloud_io import RotationMode, apply_transform, load_dataset, random_rotation
from src.training_operations.train import check_labels
from src.utils.random_streams import RandomStream
from src.utils.run_reporter import run_reporter
from src.utils.text_format import format_row

EVAL_ROTATION_STREAM = 4


@dataclass
class EvaluationReport:
    rotation: str
    labels: np.ndarray
    predictions: np.ndarray
    confusion: np.ndarray
    descriptors: Optional[np.ndarray] = None

    @property
    def num_samples(self):
        return int(self.labels.shape[0])

    @property
    def accuracy(self):
        """Overall classification accuracy"""
        return float(np.mean(self.predictions == self.labels))

    @property
    def per_class_accuracy(self):
        """Recall per class; nan for classes absent from the test set"""
        totals = self.confusion.sum(axis=1)
        correct = np.diag(self.confusion).astype(float)
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(totals > 0, correct / np.maximum(totals, 1), np.nan)


def confusion_matrix(labels, predictions, num_classes):
    """Rows are true classes, columns predicted classes"""
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)), 1)
    return matrix


def evaluation_transform(seed, index, mode):
    """The rotation applied to test sample `index` of a run seeded with `seed`"""
    return random_rotation(RandomStream(seed, EVAL_ROTATION_STREAM, index), mode)


def evaluate(model, clouds, rotation=RotationMode.NONE, seed=0, keep_descriptors=False):
    """
    Classifies every cloud after the named rotation augmentation

    The full pipeline (normalization, graph, features) is recomputed from the
    rotated cloud.
    """
    mode = RotationMode(rotation)
    check_labels(clouds, model.config.num_classes, 'test set')

    def classify(indexed):
        index, cloud = indexed
        if mode != RotationMode.NONE:
            cloud = apply_transform(cloud, evaluation_transform(seed, index, mode))
        logits, descriptor = model.forward(cloud)
        return int(np.argmax(logits)), descriptor

    items = list(enumerate(clouds))
    results = list(run_reporter.progress(batch_operations_service.imap_ordered(classify, items),
                                         f'Evaluating ({mode.value})', len(items)))
    labels = np.array([cloud.label for cloud in clouds], dtype=np.int64)
    predictions = np.array([r[0] for r in results], dtype=np.int64)
    report = EvaluationReport(
        rotation=mode.value,
        labels=labels,
        predictions=predictions,
        confusion=confusion_matrix(labels, predictions, model.config.num_classes),
        descriptors=np.vstack([r[1] for r in results]) if keep_descriptors else None,
    )
    run_reporter.record_evaluation(mode.value, report.accuracy, report.num_samples)
    return report


def evaluate_manifest(model, manifest_path, rotation=RotationMode.NONE, seed=0, keep_descriptors=False):
    return evaluate(model, load_dataset(manifest_path), rotation, seed, keep_descriptors)


def write_descriptors(report, path):
    """One line per test sample: label followed by the global descriptor"""
    if report.descriptors is None:
        raise ValueError('evaluation was run without keep_descriptors')
    with open(path, 'w') as f:
        for label, descriptor in zip(report.labels, report.descriptors):
            f.write(f'{int(label)} {format_row(descriptor)}\n')
