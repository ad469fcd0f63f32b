import io
import json
import math

import numpy as np

from src.utils.random_streams import RandomStream, as_stream, derived_seed
from src.utils.run_reporter import RunReporter
from src.utils.text_format import format_csv_value, format_real, format_table, write_csv


class TestRandomStream:

    def test_same_key_same_draws(self):
        np.testing.assert_array_equal(RandomStream(7, 1, 2).uniform(10), RandomStream(7, 1, 2).uniform(10))

    def test_keys_are_independent(self):
        assert not np.array_equal(RandomStream(7, 1).uniform(10), RandomStream(7, 2).uniform(10))
        assert not np.array_equal(RandomStream(7).uniform(10), RandomStream(8).uniform(10))

    def test_child_extends_key(self):
        np.testing.assert_array_equal(RandomStream(3, 1).child(4, 5).uniform(6), RandomStream(3, 1, 4, 5).uniform(6))

    def test_uniform_range(self):
        values = RandomStream(11).uniform(10000)
        assert values.min() >= 0.0 and values.max() < 1.0
        assert abs(values.mean() - 0.5) < 0.02

    def test_box_muller_pair_order(self):
        u = RandomStream(5).uniform(4)
        r = np.sqrt(-2.0 * np.log(1.0 - u[[0, 2]]))
        angle = 2.0 * np.pi * u[[1, 3]]
        expected = [r[0] * np.cos(angle[0]), r[0] * np.sin(angle[0]), r[1] * np.cos(angle[1])]
        np.testing.assert_allclose(RandomStream(5).normal(3), expected, rtol=1e-14)

    def test_normal_shape_and_moments(self):
        values = RandomStream(9).normal((200, 50))
        assert values.shape == (200, 50)
        assert abs(values.mean()) < 0.02 and abs(values.std() - 1.0) < 0.02

    def test_permutation_is_argsort_of_uniforms(self):
        expected = np.argsort(RandomStream(2).uniform(20), kind='stable')
        np.testing.assert_array_equal(RandomStream(2).permutation(20), expected)
        assert sorted(expected) == list(range(20))

    def test_as_stream(self):
        stream = RandomStream(1)
        assert as_stream(stream) is stream
        np.testing.assert_array_equal(as_stream(4).uniform(3), RandomStream(4).uniform(3))

    def test_derived_seed(self):
        assert derived_seed(0, 1, 2) == derived_seed(0, 1, 2)
        assert derived_seed(0, 1, 2) != derived_seed(0, 1, 3)
        assert 0 <= derived_seed(-1, 5) < 2 ** 64


class TestTextFormat:

    def test_reals_parse_back_exactly(self):
        for value in (0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789):
            assert float(format_real(value)) == value

    def test_table(self):
        assert format_table([[1.0, 2.5], [0.0, -1.0]]) == '1 2.5\n0 -1\n'
        assert format_table([1.0, 2.0]) == '1 2\n'

    def test_csv_values(self):
        assert format_csv_value(True) == '1'
        assert format_csv_value(np.int64(3)) == '3'
        assert format_csv_value(0.25) == '0.25'
        assert format_csv_value(math.nan) == 'nan'
        assert format_csv_value('all') == 'all'

    def test_write_csv(self):
        stream = io.StringIO()
        write_csv(stream, ('a', 'b'), [(1, 0.5), ('x', 2.0)])
        assert stream.getvalue() == 'a,b\n1,0.5\nx,2\n'


class TestRunReporter:

    def test_summary_lists_recorded_items(self):
        stream = io.StringIO()
        reporter = RunReporter(stream)
        reporter.start_run('train')
        reporter.log_step(1, 'Training', '2 epochs')
        reporter.log_substep('Batch done', 'loss 0.5', 'success')
        reporter.record_epoch(2, 0.25, 0.75, math.nan)
        reporter.record_evaluation('so3', 0.9, 10)
        reporter.record_artifact('checkpoint', 'model.ckpt')
        reporter.end_run(success=True)

        text = stream.getvalue()
        assert 'TRAIN STARTED' in text
        assert '┌─ Step 1: Training' in text
        assert '  ✅  Batch done' in text
        assert 'Final loss: 0.2500' in text
        assert 'so3' in text and 'accuracy 0.900 on 10 samples' in text
        assert '📄 checkpoint: model.ckpt' in text
        assert 'COMPLETED SUCCESSFULLY' in text

    def test_disabled_reporter_still_records(self):
        stream = io.StringIO()
        reporter = RunReporter(stream)
        reporter.configure(enabled=False)
        reporter.start_run('eval')
        reporter.record_error('DataError', 'bad file')
        reporter.end_run(success=False)
        assert stream.getvalue() == ''
        data = reporter.get_run_data()
        assert data['title'] == 'eval'
        assert data['summary']['errors'][0]['message'] == 'bad file'
        assert data['duration'] >= 0

    def test_start_run_resets(self):
        reporter = RunReporter(io.StringIO())
        reporter.start_run('a')
        reporter.record_artifact('x', 'y')
        reporter.start_run('b')
        assert reporter.get_run_data()['summary']['artifacts'] == []

    def test_save_run_report(self, tmp_path):
        reporter = RunReporter(io.StringIO())
        reporter.start_run('bench')
        reporter.log_step(1, 'Benchmark')
        reporter.end_run()
        path = tmp_path / 'report.json'
        reporter.save_run_report(str(path))
        saved = json.loads(path.read_text())
        assert saved['title'] == 'bench'
        assert saved['steps'][0]['title'] == 'Benchmark'
