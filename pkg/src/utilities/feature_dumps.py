#!/usr/bin/env python3
"""
Debug dumps for inspection scripts: TI feature tables, graph edge lists and
coarsening results
Usage: python3 src/utilities/feature_dumps.py cloud.xyz features.txt
"""
import enum
import os
import sys

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

import numpy as np

from src.config.settings import DEFAULT_CLUSTER_SIZE, DEFAULT_KNN_K, DEFAULT_TI_ORDER, INCLUDE_ORDER_ZERO
from src.services.graph_builder import dump_graph
from src.services.pointcloud_io import load_cloud
from src.services.pooling import coarsen, farthest_point_sample, ti_score, uniform_sample
from src.services.ti_encoder import TiEncoder, l2_normalized
from src.utils.random_streams import RandomStream
from src.utils.run_reporter import run_reporter
from src.utils.text_format import format_real, format_table

SAMPLER_STREAM = 6


class Sampler(str, enum.Enum):
    TI = 'ti'
    UNIFORM = 'uniform'
    FPS = 'fps'


def feature_table(raw, normalize=False):
    """N x 2K [contour | direction] table, optionally scaled to unit Frobenius norm"""
    table = raw.stacked()
    return l2_normalized(table) if normalize else table


def encode_file(in_path, out_path, k=DEFAULT_KNN_K, order=DEFAULT_TI_ORDER, normalize=False,
                graph_out=None, include_order_zero=INCLUDE_ORDER_ZERO):
    """Writes the TI feature table of one cloud file; returns the table"""
    cloud = load_cloud(in_path)
    raw, lap = TiEncoder(k, order, include_order_zero).encode_points(cloud.points)
    table = feature_table(raw, normalize)
    with open(out_path, 'w', encoding='utf-8') as f:
        f.write(format_table(table))
    run_reporter.log_substep('Feature table written', f'{table.shape[0]} x {table.shape[1]} -> {out_path}', 'success')
    if graph_out:
        dump_graph(lap.graph, graph_out)
        run_reporter.log_substep('Graph edge list written',
                                 f'{lap.graph.num_edges} entries, sigma={lap.graph.sigma:.6g} -> {graph_out}', 'success')
    return table


def select_points(points, num_keep, sampler=Sampler.TI, k=DEFAULT_KNN_K, order=DEFAULT_TI_ORDER, seed=0):
    """Indices kept by the TI score or by one of the reference samplers"""
    sampler = Sampler(sampler)
    n = points.shape[0]
    if not 1 <= num_keep <= n:
        raise ValueError(f'--keep must be in [1, {n}], got {num_keep}')
    if sampler == Sampler.UNIFORM:
        return uniform_sample(n, num_keep, RandomStream(seed, SAMPLER_STREAM))
    if sampler == Sampler.FPS:
        return farthest_point_sample(points, num_keep)
    raw, _ = TiEncoder(k, order).encode_points(points)
    return coarsen(points, ti_score(raw), num_keep, 1).kept


def coarsen_file(in_path, out_path, num_keep, sampler=Sampler.TI, k=DEFAULT_KNN_K,
                 cluster_size=DEFAULT_CLUSTER_SIZE, seed=0):
    """Writes "index x y z" per kept point, then one cluster line per kept point for the TI sampler"""
    cloud = load_cloud(in_path)
    points = cloud.points
    clusters = None
    if Sampler(sampler) == Sampler.TI:
        if not 1 <= num_keep <= points.shape[0]:
            raise ValueError(f'--keep must be in [1, {points.shape[0]}], got {num_keep}')
        raw, _ = TiEncoder(k).encode_points(points)
        plan = coarsen(points, ti_score(raw), num_keep, min(cluster_size, points.shape[0]))
        kept, clusters = plan.kept, plan.clusters
    else:
        kept = select_points(points, num_keep, sampler, k, seed=seed)
    with open(out_path, 'w', encoding='utf-8') as f:
        for index in kept:
            coords = ' '.join(format_real(v) for v in points[index])
            f.write(f'{int(index)} {coords}\n')
        if clusters is not None:
            f.write('# clusters\n')
            for row in clusters:
                f.write(' '.join(str(int(i)) for i in row) + '\n')
    run_reporter.log_substep('Coarsened cloud written', f'{len(kept)} of {points.shape[0]} points -> {out_path}',
                             'success')
    return np.asarray(kept)


if __name__ == '__main__':
    if len(sys.argv) != 3:
        print('Usage: python3 src/utilities/feature_dumps.py <cloud> <features-out>', file=sys.stderr)
        sys.exit(1)
    encode_file(sys.argv[1], sys.argv[2])
