"""
K-localized Chebyshev graph convolution with an analytic backward pass

The filter runs on the rescaled operator L~ = L_sym - I, whose spectrum lies
in [-1, 1] because normalized Laplacians have eigenvalues in [0, 2].
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse as sparse

from src.services.graph_builder import Laplacian, LaplacianKind
from src.utils.errors import GraphError, MissingCacheError, NumericalError, ShapeMismatchError
from src.utils.random_streams import as_stream

RELU = 'relu'
NO_ACTIVATION = 'none'


@dataclass(frozen=True)
class ScaledLaplacian:
    matrix: sparse.csr_matrix
    source: Optional[Laplacian] = None

    @property
    def num_nodes(self):
        return self.matrix.shape[0]


@dataclass
class ChebLayerParams:
    """One F_in x F_out weight matrix per Chebyshev order, plus bias

    With scalar_theta the weights are theta_k * shared (the rank-constrained form).
    """
    weights: List[np.ndarray]
    bias: np.ndarray
    activation: str = RELU
    theta: Optional[np.ndarray] = None
    shared: Optional[np.ndarray] = None

    @property
    def order(self):
        return len(self.weights) if self.theta is None else len(self.theta)

    @property
    def scalar_theta(self):
        return self.theta is not None

    def effective_weights(self):
        if self.theta is None:
            return self.weights
        return [t * self.shared for t in self.theta]

    @classmethod
    def scalar(cls, theta, shared, bias, activation=RELU):
        theta = np.asarray(theta, dtype=float)
        return cls(weights=[], bias=np.asarray(bias, dtype=float), activation=activation,
                   theta=theta, shared=np.asarray(shared, dtype=float))


@dataclass
class ChebCache:
    bases: List[np.ndarray]
    preactivation: np.ndarray


@dataclass
class ChebGradients:
    weights: List[np.ndarray]
    bias: np.ndarray
    inputs: np.ndarray
    theta: Optional[np.ndarray] = None
    shared: Optional[np.ndarray] = None


def scale_laplacian(lap):
    """L~ = L_sym - I using the lambda_max <= 2 bound"""
    if lap.kind != LaplacianKind.SYMMETRIC_NORMALIZED:
        raise GraphError(f'Chebyshev filters need the symmetric Laplacian, got {lap.kind.value}')
    matrix = (lap.matrix - sparse.identity(lap.matrix.shape[0], format='csr')).tocsr()
    matrix.setdiag(0.0)
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return ScaledLaplacian(matrix, lap)


def _check_signal(scaled, signal):
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 2 or signal.shape[0] != scaled.num_nodes:
        raise ShapeMismatchError(
            f'signal of shape {signal.shape} does not fit a {scaled.num_nodes}-node graph'
        )
    return signal


def cheb_basis(scaled, signal, order):
    """[T_0(L~)X, ..., T_{order-1}(L~)X] by the three-term recurrence"""
    signal = _check_signal(scaled, signal)
    if order < 1:
        raise ValueError(f'Chebyshev order must be >= 1, got {order}')
    bases = [signal]
    if order > 1:
        bases.append(np.asarray(scaled.matrix @ signal))
    for _ in range(2, order):
        bases.append(2.0 * np.asarray(scaled.matrix @ bases[-1]) - bases[-2])
    return bases


def cheb_forward(scaled, signal, params, layer_index=None):
    """act(sum_k T_k(L~) X Theta_k + bias); returns (output, cache)"""
    signal = _check_signal(scaled, signal)
    weights = params.effective_weights()
    if weights[0].shape[0] != signal.shape[1]:
        raise ShapeMismatchError(
            f'layer expects {weights[0].shape[0]} input channels, got {signal.shape[1]}'
        )
    bases = cheb_basis(scaled, signal, params.order)
    pre = bases[0] @ weights[0]
    for basis, weight in zip(bases[1:], weights[1:]):
        pre = pre + basis @ weight
    pre = pre + params.bias
    if not np.all(np.isfinite(pre)):
        raise NumericalError('non-finite Chebyshev convolution output', layer_index)
    output = np.maximum(pre, 0.0) if params.activation == RELU else pre
    return output, ChebCache(bases, pre)


def cheb_backward(scaled, params, upstream, cache):
    """Gradients for every Theta_k, the bias and the input signal"""
    if cache is None:
        raise MissingCacheError('Chebyshev backward called without cached bases')
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != cache.preactivation.shape:
        raise ShapeMismatchError(
            f'upstream gradient {upstream.shape} does not match output {cache.preactivation.shape}'
        )
    if params.activation == RELU:
        # derivative at 0 is 0
        upstream = upstream * (cache.preactivation > 0)

    weights = params.effective_weights()
    d_weights = [basis.T @ upstream for basis in cache.bases]
    d_bias = upstream.sum(axis=0)

    # reverse the recurrence B_k = 2 L~ B_{k-1} - B_{k-2}
    d_bases = [upstream @ weight.T for weight in weights]
    transpose = scaled.matrix.T
    for k in range(len(d_bases) - 1, 1, -1):
        d_bases[k - 1] = d_bases[k - 1] + 2.0 * np.asarray(transpose @ d_bases[k])
        d_bases[k - 2] = d_bases[k - 2] - d_bases[k]
    if len(d_bases) > 1:
        d_bases[0] = d_bases[0] + np.asarray(transpose @ d_bases[1])

    if params.scalar_theta:
        d_theta = np.array([np.sum(d * params.shared) for d in d_weights])
        d_shared = sum(t * d for t, d in zip(params.theta, d_weights))
        return ChebGradients([], d_bias, d_bases[0], theta=d_theta, shared=d_shared)
    return ChebGradients(d_weights, d_bias, d_bases[0])


def glorot_limit(in_channels, out_channels, order):
    return np.sqrt(6.0 / (in_channels * order + out_channels))


def init_cheb_params(in_channels, out_channels, order, stream, activation=RELU, scalar_theta=False):
    """Uniform in +-sqrt(6 / (F_in * K + F_out)), bias 0"""
    stream = as_stream(stream)
    limit = glorot_limit(in_channels, out_channels, order)
    bias = np.zeros(out_channels)
    if scalar_theta:
        shared = limit * (2.0 * stream.uniform((in_channels, out_channels)) - 1.0)
        theta = 2.0 * stream.uniform(order) - 1.0
        return ChebLayerParams.scalar(theta, shared, bias, activation)
    weights = [limit * (2.0 * stream.uniform((in_channels, out_channels)) - 1.0) for _ in range(order)]
    return ChebLayerParams(weights, bias, activation)


class ChebConvLayer:
    """Named wrapper exposing parameters and gradients for the classifier"""

    def __init__(self, in_channels, out_channels, order, stream, name, activation=RELU,
                 scalar_theta=False):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.params = init_cheb_params(in_channels, out_channels, order, stream, activation, scalar_theta)

    def parameters(self):
        params = {}
        if self.params.scalar_theta:
            params[f'{self.name}.theta'] = self.params.theta
            params[f'{self.name}.shared'] = self.params.shared
        else:
            for k, weight in enumerate(self.params.weights):
                params[f'{self.name}.theta{k}'] = weight
        params[f'{self.name}.bias'] = self.params.bias
        return params

    def forward(self, scaled, signal, layer_index=None):
        return cheb_forward(scaled, signal, self.params, layer_index)

    def backward(self, scaled, cache, upstream):
        """Returns (named parameter gradients, input gradient)"""
        grads = cheb_backward(scaled, self.params, upstream, cache)
        named = {}
        if self.params.scalar_theta:
            named[f'{self.name}.theta'] = grads.theta
            named[f'{self.name}.shared'] = grads.shared
        else:
            for k, d_weight in enumerate(grads.weights):
                named[f'{self.name}.theta{k}'] = d_weight
        named[f'{self.name}.bias'] = grads.bias
        return named, grads.inputs
