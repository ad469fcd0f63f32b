"""
Transform-invariant encoder

Raw features are per-point squared norms of iterated random-walk Laplacian
filters, applied to the recentered coordinates (contour variance) and to the
unit direction of the first filtered signal (direction variance). Both are
unchanged by rotations, reflections and translations of the cloud. Before
the TI layer each channel can be divided by its mean over the cloud, which
removes the global scale that depends on point count and kernel width. The
trainable TI layer is one linear map over the concatenated channels.
"""
import enum
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from src.config.settings import DEFAULT_KNN_K, DEFAULT_TI_ORDER, DIRECTION_EPS, INCLUDE_ORDER_ZERO
from src.services.graph_builder import LaplacianKind, graph_from_points, laplacian, shift_apply
from src.utils.errors import GraphError, MissingCacheError, ShapeMismatchError
from src.utils.random_streams import as_stream


@dataclass(frozen=True)
class TiRawFeatures:
    """contour / direction: N x len(orders); direction_signal: N x 3 unit rows"""
    contour: np.ndarray
    direction: np.ndarray
    direction_signal: np.ndarray
    orders: Tuple[int, ...]

    @property
    def num_points(self):
        return self.contour.shape[0]

    @property
    def num_channels(self):
        return self.contour.shape[1] + self.direction.shape[1]

    def stacked(self):
        """[contour | direction], the TI layer input"""
        return np.hstack([self.contour, self.direction])

    def order_column(self, order):
        if order not in self.orders:
            raise ValueError(f'filter order {order} not computed (have {self.orders})')
        return self.orders.index(order)


@dataclass
class TiLayerParams:
    theta: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.theta.ndim != 2 or self.bias.shape != (self.theta.shape[1],):
            raise ShapeMismatchError(
                f'theta {self.theta.shape} and bias {self.bias.shape} do not match'
            )


def _require_random_walk(lap):
    if lap.kind != LaplacianKind.RANDOM_WALK:
        raise GraphError(f'TI features need the random-walk Laplacian, got {lap.kind.value}')


def _filter_energies(lap, signal, order, include_order_zero):
    """Row squared norms of L^i X, i = 1..order (i = 0 first when requested)"""
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 2 or signal.shape[0] != lap.matrix.shape[0]:
        raise ShapeMismatchError(
            f'signal of shape {signal.shape} does not fit a {lap.matrix.shape[0]}-node graph'
        )
    if order < 1:
        raise ValueError(f'filter order must be >= 1, got {order}')
    columns = []
    if include_order_zero:
        columns.append((signal ** 2).sum(axis=1))
    filtered = signal
    for _ in range(order):
        filtered = shift_apply(lap, filtered)
        columns.append((filtered ** 2).sum(axis=1))
    return np.column_stack(columns)


def contour_variance(lap, points, order=DEFAULT_TI_ORDER, include_order_zero=False):
    """N x order matrix of ||(L^i X)_row||^2 for recentered coordinates X"""
    _require_random_walk(lap)
    return _filter_energies(lap, points, order, include_order_zero)


def direction_signal(lap, points, eps=DIRECTION_EPS):
    """Unit rows of L X; rows with norm <= eps become exactly zero"""
    _require_random_walk(lap)
    filtered = shift_apply(lap, points)
    norms = np.linalg.norm(filtered, axis=1, keepdims=True)
    directions = np.zeros_like(filtered)
    usable = norms[:, 0] > eps
    directions[usable] = filtered[usable] / norms[usable]
    return directions


def direction_variance(lap, directions, order=DEFAULT_TI_ORDER, include_order_zero=False):
    """Same iterated-filter energies as contour_variance, on the direction signal"""
    _require_random_walk(lap)
    return _filter_energies(lap, directions, order, include_order_zero)


def raw_features(lap, points, order=DEFAULT_TI_ORDER, include_order_zero=INCLUDE_ORDER_ZERO,
                 eps=DIRECTION_EPS):
    """Contour and direction variance of already recentered points"""
    directions = direction_signal(lap, points, eps)
    orders = tuple(range(0 if include_order_zero else 1, order + 1))
    return TiRawFeatures(
        contour=contour_variance(lap, points, order, include_order_zero),
        direction=direction_variance(lap, directions, order, include_order_zero),
        direction_signal=directions,
        orders=orders,
    )


class TiEncoder:
    """Point cloud -> TiRawFeatures with a fixed graph size and filter order"""

    def __init__(self, k=DEFAULT_KNN_K, order=DEFAULT_TI_ORDER, include_order_zero=INCLUDE_ORDER_ZERO,
                 eps=DIRECTION_EPS):
        self.k = k
        self.order = order
        self.include_order_zero = include_order_zero
        self.eps = eps

    def encode_points(self, points):
        """Returns (raw features, random-walk Laplacian) of a coordinate matrix"""
        points = np.asarray(points, dtype=float)
        centered = points - points.mean(axis=0)
        lap = laplacian(graph_from_points(centered, self.k), LaplacianKind.RANDOM_WALK)
        return raw_features(lap, centered, self.order, self.include_order_zero, self.eps), lap

    def encode(self, cloud):
        return self.encode_points(cloud.points)[0]


class FeatureScaling(str, enum.Enum):
    NONE = 'none'
    CLOUD_MEAN = 'cloud_mean'


def _mean_scaled(table, eps):
    means = table.mean(axis=0)
    usable = means > eps
    scaled = np.zeros_like(table)
    scaled[:, usable] = table[:, usable] / means[usable]
    return scaled


def scale_features(raw, mode=FeatureScaling.CLOUD_MEAN, eps=DIRECTION_EPS):
    """
    Per-cloud channel scaling of raw features

    cloud_mean divides every contour and direction channel by its mean over
    the points, so each channel has mean 1 and constant factors on a channel
    cancel. Channels whose mean is <= eps become zero. The direction signal
    is passed through.
    """
    mode = FeatureScaling(mode)
    if mode == FeatureScaling.NONE:
        return raw
    return replace(raw, contour=_mean_scaled(raw.contour, eps), direction=_mean_scaled(raw.direction, eps))


def l2_normalized(table):
    """Scales a feature table to unit Frobenius norm (zero tables are returned as-is)"""
    norm = np.linalg.norm(table)
    return table / norm if norm > 0 else table


# ------------------------------------------ TI LAYER ------------------------------------------

def ti_layer_forward(raw, params):
    """[contour | direction] @ theta + bias"""
    stacked = raw.stacked()
    if stacked.shape[1] != params.theta.shape[0]:
        raise ShapeMismatchError(
            f'TI layer expects {params.theta.shape[0]} raw channels, got {stacked.shape[1]}'
        )
    return stacked @ params.theta + params.bias


def ti_layer_backward(raw, params, upstream):
    """Returns (d theta, d bias) for an upstream gradient N x F0"""
    stacked = raw.stacked()
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (stacked.shape[0], params.theta.shape[1]):
        raise ShapeMismatchError(
            f'upstream gradient {upstream.shape} does not match output '
            f'{(stacked.shape[0], params.theta.shape[1])}'
        )
    return stacked.T @ upstream, upstream.sum(axis=0)


class TiLayer:
    """Trainable linear map from 2K raw channels to F0 output channels"""

    def __init__(self, in_channels, out_channels, stream, name='ti'):
        self.name = name
        limit = np.sqrt(6.0 / (in_channels + out_channels))
        stream = as_stream(stream)
        self.params = TiLayerParams(
            theta=limit * (2.0 * stream.uniform((in_channels, out_channels)) - 1.0),
            bias=np.zeros(out_channels),
        )

    def parameters(self):
        return {f'{self.name}.theta': self.params.theta, f'{self.name}.bias': self.params.bias}

    def forward(self, raw):
        return ti_layer_forward(raw, self.params), raw

    def backward(self, cache, upstream):
        if cache is None:
            raise MissingCacheError('TI layer backward called without a forward cache')
        d_theta, d_bias = ti_layer_backward(cache, self.params, upstream)
        return {f'{self.name}.theta': d_theta, f'{self.name}.bias': d_bias}
