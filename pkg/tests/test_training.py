import io
import math
from types import SimpleNamespace

import numpy as np
import pytest

from src.services.batch_operations import BatchOperationsService, batch_operations_service
from src.services.classifier import ModelConfig, PointCloudClassifier, TrainConfig
from src.services.pointcloud_io import PointCloud, SyntheticShapeSpec, generate_shape, load_dataset
from src.setup.generate_dataset import build_synthetic_clouds, generate_dataset
from src.training_operations.bench import BENCH_COLUMNS, bench, median_ms
from src.training_operations.evaluate import confusion_matrix, evaluate, evaluate_manifest, write_descriptors
from src.training_operations.rotation_protocols import noise_sweep, point_sweep, rotate_test
from src.training_operations.train import check_labels, prepare_all, prepared_accuracy, robustness_copies, train
from src.utils.errors import ManifestError, NumericalError
from src.utils.run_reporter import run_reporter

SMALL = dict(num_classes=2, knn_k=6, ti_order=2, ti_channels=4, gcn_widths=(6, 8), cheb_orders=(2, 2),
             pool_after=(0,), keep_ratio=0.5, cluster_size=4, rebuild_k=5, head_widths=(8, 6),
             dropout_keep=1.0, l2=0.0, init_seed=1)


def small_model(**overrides):
    return PointCloudClassifier(ModelConfig(**dict(SMALL, **overrides)))


def rows(metrics):
    return np.array([m.as_row() for m in metrics])


@pytest.fixture(scope='module')
def clouds():
    return build_synthetic_clouds('sphere,cone', 3, 48, seed=5, jitter_sigma=0.0)


def cone_clouds(count, seed):
    """Non-symmetric shapes with alternating labels"""
    return [generate_shape(SyntheticShapeSpec('cone', 64, seed + i), label=i % 2) for i in range(count)]


class TestBatchOperations:

    def test_results_in_input_order(self):
        service = BatchOperationsService(4)
        assert service.map_ordered(lambda x: x * x, range(10)) == [x * x for x in range(10)]

    def test_first_failure_in_input_order(self):
        service = BatchOperationsService(4)

        def job(x):
            if x >= 2:
                raise ValueError(f'item {x}')
            return x

        with pytest.raises(ValueError, match='item 2'):
            service.map_ordered(job, range(6))

    def test_imap_ordered_is_lazy(self):
        calls = []
        results = BatchOperationsService(1).imap_ordered(lambda x: calls.append(x) or x * 2, range(3))
        assert calls == []
        assert next(results) == 0 and calls == [0]
        assert list(results) == [2, 4]

    def test_imap_ordered_keeps_order_on_threads(self):
        service = BatchOperationsService(4)
        assert list(service.imap_ordered(lambda x: x * x, range(10))) == [x * x for x in range(10)]

    def test_threads_must_be_positive(self):

        with pytest.raises(ValueError):
            BatchOperationsService().configure(0)


class TestTrain:

    def test_zero_learning_rate_leaves_parameters_unchanged(self, clouds):
        model = small_model()
        before = {name: value.copy() for name, value in model.parameters().items()}
        train(model, clouds, TrainConfig(batch_size=2, epochs=2, learning_rate=0.0, momentum=0.9, seed=3))
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(value, before[name])

    def test_same_seed_same_metrics(self, clouds):
        config = TrainConfig(batch_size=2, epochs=2, learning_rate=0.01, seed=3, rotation='z')
        first = train(small_model(dropout_keep=0.7), clouds, config).metrics
        second = train(small_model(dropout_keep=0.7), clouds, config).metrics
        np.testing.assert_array_equal(rows(first), rows(second))

    def test_thread_count_does_not_change_results(self, clouds):
        config = TrainConfig(batch_size=3, epochs=2, learning_rate=0.01, seed=4)
        single = train(small_model(), clouds, config).metrics
        batch_operations_service.configure(3)
        threaded = train(small_model(), clouds, config).metrics
        np.testing.assert_array_equal(rows(single), rows(threaded))

    def test_full_batch_descent_reduces_loss(self, clouds):
        config = TrainConfig(batch_size=len(clouds), epochs=10, learning_rate=0.01, momentum=0.0, seed=0,
                             class_weighting=False, rotation='none')
        metrics = train(small_model(), clouds, config).metrics
        assert len(metrics) == 11
        assert metrics[1].train_loss == pytest.approx(metrics[0].train_loss, rel=1e-12)
        assert metrics[-1].train_loss < metrics[0].train_loss

    def test_metrics_stream(self, clouds):
        stream = io.StringIO()
        result = train(small_model(), clouds, TrainConfig(batch_size=4, epochs=2, seed=1), metrics_stream=stream)
        lines = stream.getvalue().splitlines()
        assert lines[0] == 'epoch,train_loss,train_acc,val_acc'
        assert len(lines) == 4
        assert [int(line.split(',')[0]) for line in lines[1:]] == [0, 1, 2]
        assert math.isnan(result.final.val_acc)

    def test_validation_accuracy(self, clouds):
        result = train(small_model(), clouds, TrainConfig(batch_size=4, epochs=1, seed=1), val_clouds=clouds[:2])
        assert result.final.val_acc in (0.0, 0.5, 1.0)

    def test_raw_coordinate_augmentation_runs(self, clouds):
        model = small_model(input_mode='raw_coordinates')
        result = train(model, clouds, TrainConfig(batch_size=3, epochs=1, seed=2, rotation='so3'))
        assert np.isfinite(result.final.train_loss)

    def test_bad_labels(self, clouds):
        with pytest.raises(ManifestError):
            train(small_model(), [clouds[0].with_label(5)], TrainConfig(epochs=1))
        with pytest.raises(ManifestError):
            check_labels([], 2)
        with pytest.raises(ManifestError):
            check_labels([PointCloud(np.eye(3))], 2)

    def test_non_finite_parameters(self, clouds):
        model = small_model()
        model.parameters()['dense0.weight'][...] = np.inf
        with pytest.raises(NumericalError):
            train(model, clouds, TrainConfig(epochs=1))

    def test_separable_pair_is_learned_within_fifty_epochs(self):
        toy = build_synthetic_clouds('sphere,cube', 6, 64, seed=11, jitter_sigma=0.0)
        model = small_model(ti_channels=8, gcn_widths=(8, 8))
        config = TrainConfig(batch_size=4, epochs=50, learning_rate=0.01, seed=2, class_weighting=False,
                             rotation='none')
        metrics = train(model, toy, config).metrics
        assert metrics[10].train_loss < metrics[0].train_loss
        assert max(m.train_acc for m in metrics[1:]) == 1.0
        assert prepared_accuracy(model, prepare_all(model, toy)) == 1.0


class TestRobustnessCopies:

    def test_no_copies_by_default(self, clouds):
        assert robustness_copies(clouds, TrainConfig()) == []

    def test_resampled_and_jittered_copies(self, clouds):
        config = TrainConfig(seed=3, subsample_ratios=(0.5,), jitter_copies=(0.02,))
        extra = robustness_copies(clouds, config)
        assert len(extra) == 2 * len(clouds)
        resampled, jittered = extra[:len(clouds)], extra[len(clouds):]
        for original, copy in zip(clouds, resampled):
            assert copy.num_points == 24
            assert copy.label == original.label
            original_rows = {tuple(row) for row in original.points}
            assert all(tuple(row) in original_rows for row in copy.points)
        for original, copy in zip(clouds, jittered):
            assert copy.label == original.label
            assert copy.points.shape == original.points.shape
            assert not np.array_equal(copy.points, original.points)
        again = robustness_copies(clouds, config)
        for a, b in zip(extra, again):
            np.testing.assert_array_equal(a.points, b.points)

    def test_resampled_copies_keep_minimum_size(self, clouds):
        extra = robustness_copies(clouds, TrainConfig(subsample_ratios=(0.05,)), min_points=7)
        assert all(copy.num_points == 7 for copy in extra)

    def test_copies_join_the_training_set(self, clouds):
        model = small_model()
        prepare = model.prepare
        sizes = []
        model.prepare = lambda cloud: sizes.append(cloud.num_points) or prepare(cloud)
        train(model, clouds, TrainConfig(batch_size=4, epochs=1, seed=1, subsample_ratios=(0.5,)))
        assert sorted(sizes) == [24] * len(clouds) + [48] * len(clouds)

    def test_ratios_are_validated(self):
        with pytest.raises(ValueError):
            TrainConfig(subsample_ratios=(1.0,))
        with pytest.raises(ValueError):
            TrainConfig(jitter_copies=(-0.1,))
        assert TrainConfig.from_mapping({'subsample_ratios': '0.5,0.75'}).subsample_ratios == (0.5, 0.75)


class FixedModel:
    """Stand-in classifier with a lookup from first coordinate to predicted class"""

    def __init__(self, num_classes, predict):
        self.config = SimpleNamespace(num_classes=num_classes)
        self.predict = predict

    def forward(self, cloud):
        logits = np.zeros(self.config.num_classes)
        logits[self.predict(cloud)] = 1.0
        return logits, np.array([float(cloud.label or 0)])


class TestEvaluate:

    def test_confusion_matrix(self):
        matrix = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 1], 3)
        np.testing.assert_array_equal(matrix, [[1, 1, 0], [0, 1, 0], [0, 1, 0]])

    def test_memorizing_model(self):
        data = cone_clouds(6, seed=1)
        lookup = {float(c.points[0, 0]): c.label for c in data}
        report = evaluate(FixedModel(2, lambda c: lookup[float(c.points[0, 0])]), data)
        assert report.accuracy == 1.0
        np.testing.assert_array_equal(report.confusion, [[3, 0], [0, 3]])

    def test_constant_model(self):
        data = cone_clouds(4, seed=2)
        report = evaluate(FixedModel(3, lambda c: 0), data)
        assert report.accuracy == 0.5
        per_class = report.per_class_accuracy
        assert per_class[0] == 1.0 and per_class[1] == 0.0 and math.isnan(per_class[2])

    def test_rotation_is_deterministic_per_seed(self):
        data = cone_clouds(3, seed=3)
        seen = []
        model = FixedModel(2, lambda c: seen.append(c.points.copy()) or 0)
        evaluate(model, data, 'so3', seed=9)
        evaluate(model, data, 'so3', seed=9)
        for a, b in zip(seen[:3], seen[3:]):
            np.testing.assert_array_equal(a, b)
        assert not np.allclose(seen[0], data[0].points)

    def test_ti_model_ignores_test_rotation(self):
        model = small_model()
        data = cone_clouds(4, seed=4)
        plain = evaluate(model, data, 'none', keep_descriptors=True)
        rotated = evaluate(model, data, 'so3', seed=7, keep_descriptors=True)
        np.testing.assert_array_equal(plain.predictions, rotated.predictions)
        np.testing.assert_allclose(plain.descriptors, rotated.descriptors, atol=1e-8)

    def test_progress_advances_with_classification(self, monkeypatch):
        events = []

        def progress(iterable, description, total=None):
            for item in iterable:
                events.append('tick')
                yield item

        monkeypatch.setattr(run_reporter, 'progress', progress)
        evaluate(FixedModel(2, lambda c: events.append('classify') or 0), cone_clouds(3, seed=8))
        assert events == ['classify', 'tick'] * 3

    def test_write_descriptors(self, tmp_path):

        model = small_model()
        report = evaluate(model, cone_clouds(2, seed=5), keep_descriptors=True)
        path = tmp_path / 'desc.txt'
        write_descriptors(report, path)
        lines = path.read_text().splitlines()
        assert [line.split()[0] for line in lines] == ['0', '1']
        assert len(lines[0].split()) == 1 + 8
        with pytest.raises(ValueError):
            write_descriptors(evaluate(model, cone_clouds(2, seed=5)), path)


class TestProtocols:

    def test_rotate_test_rows(self):
        data = cone_clouds(4, seed=6)
        model, rows = rotate_test(ModelConfig(**SMALL), TrainConfig(batch_size=2, epochs=1, seed=1, rotation='none'),
                                  data, data)
        assert [(row.train_rotation, row.test_rotation) for row in rows] == [('z', 'none'), ('z', 'z'), ('z', 'so3')]
        assert all(0.0 <= row.accuracy <= 1.0 for row in rows)
        assert isinstance(model, PointCloudClassifier)

    def test_noise_sweep_without_noise_matches_plain_evaluation(self):
        model = small_model()
        data = cone_clouds(4, seed=7)
        rows = noise_sweep(model, data, [0.0, 0.05], seed=1)
        assert [row.value for row in rows] == [0.0, 0.05]
        assert rows[0].accuracy == evaluate(model, data).accuracy

    def test_point_sweep(self):
        rows = point_sweep(small_model(), 'sphere,cone', 2, [32, 48], seed=1)
        assert [(row.parameter, row.value) for row in rows] == [('points', 32.0), ('points', 48.0)]


class TestBench:

    def test_rows(self):
        rows = bench([32], [4, 6], repeat=1, model_config=ModelConfig(**SMALL))
        assert [(row.points, row.k) for row in rows] == [(32, 4), (32, 6)]
        assert all(row.graph_ms >= 0 and row.forward_ms >= 0 for row in rows)
        assert rows[0].params == small_model().parameter_count()
        assert len(rows[0].as_row()) == len(BENCH_COLUMNS)

    def test_repeat_must_be_positive(self):
        with pytest.raises(ValueError):
            bench([32], [4], repeat=0)

    def test_median_ms(self):
        calls = []
        assert median_ms(lambda: calls.append(1), 3) >= 0
        assert len(calls) == 3


class TestManifestRuns:

    def test_train_and_evaluate_from_manifests(self, tmp_path):
        manifests = generate_dataset(tmp_path / 'data', 'sphere,cone', 2, 48, seed=2, jitter_sigma=0.0,
                                     test_per_class=1)
        model = small_model()
        result = train(model, load_dataset(manifests['train']), TrainConfig(batch_size=2, epochs=1, seed=1),
                       val_clouds=load_dataset(manifests['test']))
        assert len(result.metrics) == 2
        assert result.final.val_acc in (0.0, 0.5, 1.0)
        report = evaluate_manifest(model, manifests['test'], 'z', seed=3)
        assert report.num_samples == 2
