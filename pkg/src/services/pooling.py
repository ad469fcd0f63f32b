"""
TI-score pooling: keep the points whose contour variance is largest,
max-pool features over each kept point's m-NN cluster and rebuild the graph
for the next resolution. Uniform and farthest-point samplers are provided as
references for coarsening comparisons.
"""
import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from src.config.settings import DEFAULT_CLUSTER_SIZE
from src.services.graph_builder import build_graph, knn
from src.utils.errors import MissingCacheError, ShapeMismatchError
from src.utils.random_streams import as_stream


class ScoreMode(str, enum.Enum):
    CONTOUR = 'contour'
    L2 = 'l2'


class GraphSpace(str, enum.Enum):
    COORDINATES = 'coordinates'
    FEATURES = 'features'


@dataclass(frozen=True)
class PoolingPlan:
    """kept: N' parent indices, clusters: N' x m parent indices (self included)"""
    kept: np.ndarray
    clusters: np.ndarray
    parent_size: int

    @property
    def cluster_size(self):
        return self.clusters.shape[1]

    @property
    def num_kept(self):
        return self.kept.shape[0]


@dataclass
class PoolCache:
    """Parent row achieving each pooled maximum"""
    argmax_rows: np.ndarray
    parent_shape: tuple


def ti_score(raw, mode=ScoreMode.CONTOUR):
    """First-order contour variance per point, or the L2 norm over all raw channels"""
    if ScoreMode(mode) == ScoreMode.L2:
        return np.linalg.norm(raw.stacked(), axis=1)
    return raw.contour[:, raw.order_column(1)].copy()


def top_indices(scores, count):
    """Indices of the `count` largest scores, descending, ties by ascending index"""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:count]


def nearest_clusters(points, kept, cluster_size):
    """For each kept row, its cluster_size nearest rows of `points` with itself first"""
    points = np.asarray(points, dtype=float)
    distances = cdist(points[kept], points, 'sqeuclidean')
    distances[np.arange(kept.shape[0]), kept] = -1.0
    order = np.argsort(distances, axis=1, kind='stable')
    return order[:, :cluster_size]


def coarsen(points, scores, num_keep, cluster_size=DEFAULT_CLUSTER_SIZE):
    """Keep the top-N' points by score and cluster their m nearest parents"""
    points = np.asarray(points, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n = points.shape[0]
    if scores.shape != (n,):
        raise ShapeMismatchError(f'expected {n} scores, got shape {scores.shape}')
    if not 1 <= num_keep <= n:
        raise ValueError(f'number of kept points must be in [1, {n}], got {num_keep}')
    if not 1 <= cluster_size <= n:
        raise ValueError(f'cluster size must be in [1, {n}], got {cluster_size}')
    kept = top_indices(scores, num_keep)
    return PoolingPlan(kept, nearest_clusters(points, kept, cluster_size), n)


def pool_features(plan, features):
    """Channel-wise max over each cluster; returns (pooled, cache)"""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] != plan.parent_size:
        raise ShapeMismatchError(
            f'features of shape {features.shape} do not match a {plan.parent_size}-point plan'
        )
    # ascending parent order so ties go to the lowest index
    members = np.sort(plan.clusters, axis=1)
    gathered = features[members]
    winner = gathered.argmax(axis=1)
    argmax_rows = np.take_along_axis(members, winner, axis=1)
    pooled = np.take_along_axis(gathered, winner[:, None, :], axis=1)[:, 0, :]
    return pooled, PoolCache(argmax_rows, features.shape)


def pool_backward(plan, upstream, cache):
    """Routes each pooled gradient entry to the parent row that won the max"""
    if cache is None:
        raise MissingCacheError('pool backward called without the forward argmax cache')
    if cache.parent_shape[0] != plan.parent_size:
        raise ShapeMismatchError('cache was produced by a different pooling plan')
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != cache.argmax_rows.shape:
        raise ShapeMismatchError(
            f'upstream gradient {upstream.shape} does not match pooled shape {cache.argmax_rows.shape}'
        )
    grad = np.zeros(cache.parent_shape)
    channels = np.broadcast_to(np.arange(upstream.shape[1]), upstream.shape)
    np.add.at(grad, (cache.argmax_rows, channels), upstream)
    return grad


def rebuild_graph(kept, k, coordinates=None, features=None, space=GraphSpace.COORDINATES):
    """kNN graph over the kept rows, in coordinate or feature space"""
    space = GraphSpace(space)
    rows = coordinates if space == GraphSpace.COORDINATES else features
    if rows is None:
        raise ValueError(f'no {space.value} given to rebuild the graph from')
    selected = np.asarray(rows, dtype=float)[np.asarray(kept)]
    return build_graph(knn(selected, min(k, selected.shape[0] - 1)))


# ------------------------------------ REFERENCE SAMPLERS ------------------------------------

def uniform_sample(num_points, num_keep, stream):
    """Uniform random subset without replacement"""
    return as_stream(stream).permutation(num_points)[:num_keep]


def farthest_point_sample(points, num_keep, start=0):
    """Greedy farthest point sampling from a fixed start index"""
    points = np.asarray(points, dtype=float)
    selected = [int(start)]
    distances = ((points - points[start]) ** 2).sum(axis=1)
    while len(selected) < num_keep:
        index = int(np.argmax(distances))
        selected.append(index)
        distances = np.minimum(distances, ((points - points[index]) ** 2).sum(axis=1))
    return np.array(selected, dtype=np.int64)
