"""
Wall-clock benchmark of graph construction, TI encoding and a full forward pass
"""
import time
from dataclasses import dataclass, replace

import numpy as np

from src.services.classifier import ModelConfig, PointCloudClassifier
from src.services.graph_builder import graph_from_points
from src.services.pointcloud_io import ShapeKind, SyntheticShapeSpec, generate_shape
from src.services.ti_encoder import TiEncoder
from src.utils.run_reporter import run_reporter

BENCH_COLUMNS = ('points', 'k', 'graph_ms', 'encode_ms', 'forward_ms', 'params')


@dataclass(frozen=True)
class BenchRow:
    points: int
    k: int
    graph_ms: float
    encode_ms: float
    forward_ms: float
    params: int

    def as_row(self):
        return (self.points, self.k, self.graph_ms, self.encode_ms, self.forward_ms, self.params)


def median_ms(fn, repeat):
    """Median wall-clock time of `repeat` calls, in milliseconds (repeat=1 is the single timing)"""
    timings = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        timings.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(timings))


def bench(point_counts, ks, repeat=3, seed=0, model_config=None):
    """One BenchRow per (N, k), sweeping k fastest"""
    if repeat < 1:
        raise ValueError(f'--repeat must be >= 1, got {repeat}')
    base = model_config or ModelConfig()
    rows = []
    for n in point_counts:
        cloud = generate_shape(SyntheticShapeSpec(ShapeKind.TORUS, int(n), seed))
        for k in ks:
            k = int(k)
            model = PointCloudClassifier(replace(base, knn_k=k))
            encoder = TiEncoder(k, base.ti_order, base.include_order_zero)
            row = BenchRow(
                points=int(n),
                k=k,
                graph_ms=median_ms(lambda: graph_from_points(cloud.points, k), repeat),
                encode_ms=median_ms(lambda: encoder.encode(cloud), repeat),
                forward_ms=median_ms(lambda: model.forward(cloud), repeat),
                params=model.parameter_count(),
            )
            rows.append(row)
            run_reporter.log_substep(f'N={n} k={k}',
                                     f'graph {row.graph_ms:.2f} ms, encode {row.encode_ms:.2f} ms, '
                                     f'forward {row.forward_ms:.2f} ms', 'info')
    return rows
