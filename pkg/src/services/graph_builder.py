"""
Graph service: exact kNN search, Gaussian-weighted symmetric adjacency and
the normalized Laplacian shift operators
"""
import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
from scipy.spatial.distance import cdist

from src.utils.errors import GraphError, ShapeMismatchError
from src.utils.text_format import format_real

# Rows of the distance matrix computed per block during kNN search
KNN_BLOCK_ROWS = 1024


class LaplacianKind(str, enum.Enum):
    RANDOM_WALK = 'random_walk'
    SYMMETRIC_NORMALIZED = 'symmetric_normalized'


@dataclass(frozen=True)
class KnnResult:
    """indices: N x k neighbor table, sq_dists: matching squared distances"""
    indices: np.ndarray
    sq_dists: np.ndarray

    @property
    def num_nodes(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric weighted adjacency in CSR layout"""
    weights: sparse.csr_matrix
    degrees: np.ndarray
    sigma: float

    @property
    def num_nodes(self):
        return self.weights.shape[0]

    @property
    def num_edges(self):
        return self.weights.nnz


@dataclass(frozen=True)
class Laplacian:
    kind: LaplacianKind
    matrix: sparse.csr_matrix
    graph: SparseGraph


def _as_matrix(points_or_features):
    data = np.asarray(points_or_features, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if data.ndim != 2 or data.shape[1] < 1:
        raise ShapeMismatchError(f'expected an N x D matrix, got shape {data.shape}')
    return data


def knn(points_or_features, k):
    """Exact k nearest neighbors by squared Euclidean distance, ties by index

    A point is never its own neighbor; duplicates are each other's neighbors
    at distance 0.
    """
    data = _as_matrix(points_or_features)
    n = data.shape[0]
    if not 1 <= k <= n - 1:
        raise GraphError(f'k must be in [1, {n - 1}] for {n} points, got {k}')

    indices = np.empty((n, k), dtype=np.int64)
    sq_dists = np.empty((n, k))
    for start in range(0, n, KNN_BLOCK_ROWS):
        stop = min(start + KNN_BLOCK_ROWS, n)
        block = cdist(data[start:stop], data, 'sqeuclidean')
        rows = np.arange(stop - start)
        block[rows, start + rows] = np.inf
        # stable sort keeps ascending index order among equal distances
        order = np.argsort(block, axis=1, kind='stable')[:, :k]
        indices[start:stop] = order
        sq_dists[start:stop] = np.take_along_axis(block, order, axis=1)
    return KnnResult(indices, sq_dists)


def build_graph(knn_result):
    """Gaussian kNN weights w = exp(-E / sigma^2), symmetrized by entrywise max

    sigma is the mean over points of the largest neighbor squared distance.
    """
    n, k = knn_result.indices.shape
    sq_dists = knn_result.sq_dists
    sigma = float(sq_dists.max(axis=1).mean())
    if not sigma > 0:
        raise GraphError('sigma is zero: all neighborhoods collapse to a single point')

    values = np.exp(-sq_dists / sigma ** 2)
    # keep every kNN edge even if the Gaussian underflows
    values = np.maximum(values, np.finfo(float).tiny)
    rows = np.repeat(np.arange(n), k)
    directed = sparse.csr_matrix((values.ravel(), (rows, knn_result.indices.ravel())), shape=(n, n))
    weights = directed.maximum(directed.T).tocsr()
    weights.sort_indices()
    degrees = np.asarray(weights.sum(axis=1)).ravel()
    return SparseGraph(weights, degrees, sigma)


def graph_from_points(points_or_features, k):
    """knn + build_graph, clamping k to the node count"""
    data = _as_matrix(points_or_features)
    return build_graph(knn(data, min(k, data.shape[0] - 1)))


def laplacian(graph, kind):
    """random_walk: I - D^-1 W; symmetric_normalized: I - D^-1/2 W D^-1/2"""
    kind = LaplacianKind(kind)
    if np.any(graph.degrees <= 0):
        zero = int(np.argmin(graph.degrees))
        raise GraphError(f'node {zero} has zero degree')
    identity = sparse.identity(graph.num_nodes, format='csr')
    if kind == LaplacianKind.RANDOM_WALK:
        shift = sparse.diags(1.0 / graph.degrees) @ graph.weights
    else:
        inv_sqrt = sparse.diags(1.0 / np.sqrt(graph.degrees))
        shift = inv_sqrt @ graph.weights @ inv_sqrt
    matrix = (identity - shift).tocsr()
    matrix.sort_indices()
    return Laplacian(kind, matrix, graph)


def shift_apply(lap, signal):
    """Sparse L @ X in O(|edges| * F)"""
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 2 or signal.shape[0] != lap.matrix.shape[0]:
        raise ShapeMismatchError(
            f'signal of shape {signal.shape} does not fit a {lap.matrix.shape[0]}-node graph'
        )
    return np.asarray(lap.matrix @ signal)


def edge_list_lines(graph):
    """"i j w" lines sorted by (i, j), weights at 17 significant digits"""
    coo = graph.weights.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for idx in order:
        yield f'{coo.row[idx]} {coo.col[idx]} {format_real(coo.data[idx])}'


def dump_graph(graph, path):
    """Writes the debug edge list of a graph"""
    with open(path, 'w', encoding='utf-8') as file:
        for line in edge_list_lines(graph):
            file.write(line + '\n')
