import numpy as np
import pytest

from src.services.cheb_gcn import (
    NO_ACTIVATION,
    RELU,
    ChebConvLayer,
    ChebLayerParams,
    cheb_backward,
    cheb_basis,
    cheb_forward,
    glorot_limit,
    init_cheb_params,
    scale_laplacian,
)
from src.services.graph_builder import graph_from_points, laplacian
from src.utils.errors import GraphError, MissingCacheError, NumericalError, ShapeMismatchError
from src.utils.random_streams import RandomStream


def scaled_graph(n, k, seed):
    points = RandomStream(seed).normal((n, 3))
    return scale_laplacian(laplacian(graph_from_points(points, k), 'symmetric_normalized'))


def numeric_gradient(objective, value, eps=1e-6):
    numeric = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        original = value[index]
        value[index] = original + eps
        plus = objective()
        value[index] = original - eps
        minus = objective()
        value[index] = original
        numeric[index] = (plus - minus) / (2 * eps)
    return numeric


class TestScaledLaplacian:

    def test_two_node_graph(self):
        graph = graph_from_points(np.array([[0.0, 0, 0], [1.0, 0, 0]]), 1)
        scaled = scale_laplacian(laplacian(graph, 'symmetric_normalized'))
        np.testing.assert_allclose(scaled.matrix.toarray(), [[0, -1], [-1, 0]], atol=1e-15)

    def test_spectrum_in_unit_interval(self):
        eigenvalues = np.linalg.eigvalsh(scaled_graph(30, 5, seed=1).matrix.toarray())
        assert eigenvalues.min() >= -1 - 1e-10
        assert eigenvalues.max() <= 1 + 1e-10

    def test_rejects_random_walk(self):
        graph = graph_from_points(RandomStream(2).normal((8, 3)), 3)
        with pytest.raises(GraphError):
            scale_laplacian(laplacian(graph, 'random_walk'))


class TestChebForward:

    def test_basis_matches_dense_polynomials(self):
        scaled = scaled_graph(20, 4, seed=3)
        dense = scaled.matrix.toarray()
        signal = RandomStream(3, 1).normal((20, 2))
        expected = [np.eye(20), dense]
        for _ in range(2, 5):
            expected.append(2 * dense @ expected[-1] - expected[-2])
        for basis, polynomial in zip(cheb_basis(scaled, signal, 5), expected):
            np.testing.assert_allclose(basis, polynomial @ signal, atol=1e-12)

    def test_order_one_ignores_the_graph(self):
        scaled = scaled_graph(12, 3, seed=4)
        params = init_cheb_params(3, 2, 1, RandomStream(4, 1), activation=NO_ACTIVATION)
        params.bias[:] = [0.5, -0.25]
        signal = RandomStream(4, 2).normal((12, 3))
        out, _ = cheb_forward(scaled, signal, params)
        np.testing.assert_allclose(out, signal @ params.weights[0] + params.bias)

    def test_relu_output(self):
        scaled = scaled_graph(15, 4, seed=5)
        params = init_cheb_params(3, 4, 3, RandomStream(5, 1))
        out, cache = cheb_forward(scaled, RandomStream(5, 2).normal((15, 3)), params)
        np.testing.assert_array_equal(out, np.maximum(cache.preactivation, 0.0))
        assert np.any(out == 0) and np.any(out > 0)

    def test_filter_is_localized(self):
        # evenly spaced points with k=1 form a path graph
        points = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        scaled = scale_laplacian(laplacian(graph_from_points(points, 1), 'symmetric_normalized'))
        impulse = np.zeros((10, 1))
        impulse[0] = 1.0
        params = init_cheb_params(1, 3, 3, RandomStream(6), activation=NO_ACTIVATION)
        out, _ = cheb_forward(scaled, impulse, params)
        np.testing.assert_array_equal(out[3:], 0.0)
        assert np.any(out[2] != 0)

    def test_non_finite_output(self):
        scaled = scaled_graph(10, 3, seed=7)
        params = init_cheb_params(3, 2, 2, RandomStream(7))
        signal = RandomStream(7, 1).normal((10, 3))
        signal[4, 1] = np.nan
        with pytest.raises(NumericalError) as excinfo:
            cheb_forward(scaled, signal, params, layer_index=2)
        assert excinfo.value.layer_index == 2

    def test_shape_checks(self):
        scaled = scaled_graph(10, 3, seed=8)
        params = init_cheb_params(3, 2, 2, RandomStream(8))
        with pytest.raises(ShapeMismatchError):
            cheb_forward(scaled, np.zeros((9, 3)), params)
        with pytest.raises(ShapeMismatchError):
            cheb_forward(scaled, np.zeros((10, 4)), params)


class TestChebBackward:

    @pytest.mark.parametrize('order', [1, 2, 3])
    def test_matches_finite_differences(self, order):
        scaled = scaled_graph(32, 6, seed=9)
        params = init_cheb_params(4, 5, order, RandomStream(9, order), activation=NO_ACTIVATION)
        params.bias[:] = RandomStream(9, 10).normal(5)
        signal = RandomStream(9, 11).normal((32, 4))
        upstream = RandomStream(9, 12).normal((32, 5))

        def objective():
            return float(np.sum(cheb_forward(scaled, signal, params)[0] * upstream))

        _, cache = cheb_forward(scaled, signal, params)
        grads = cheb_backward(scaled, params, upstream, cache)
        for weight, d_weight in zip(params.weights, grads.weights):
            np.testing.assert_allclose(d_weight, numeric_gradient(objective, weight), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(grads.bias, numeric_gradient(objective, params.bias), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(grads.inputs, numeric_gradient(objective, signal), rtol=1e-6, atol=1e-7)

    def test_relu_masks_gradient(self):
        scaled = scaled_graph(20, 4, seed=10)
        params = init_cheb_params(3, 4, 2, RandomStream(10, 1))
        _, cache = cheb_forward(scaled, RandomStream(10, 2).normal((20, 3)), params)
        upstream = np.ones((20, 4))
        grads = cheb_backward(scaled, params, upstream, cache)
        masked = (cache.preactivation > 0).astype(float)
        np.testing.assert_allclose(grads.bias, masked.sum(axis=0))
        np.testing.assert_allclose(grads.weights[0], cache.bases[0].T @ masked)

    def test_scalar_theta_matches_finite_differences(self):
        scaled = scaled_graph(24, 5, seed=11)
        params = init_cheb_params(3, 2, 3, RandomStream(11, 1), activation=NO_ACTIVATION, scalar_theta=True)
        assert params.scalar_theta and params.order == 3
        signal = RandomStream(11, 2).normal((24, 3))
        upstream = RandomStream(11, 3).normal((24, 2))

        def objective():
            return float(np.sum(cheb_forward(scaled, signal, params)[0] * upstream))

        _, cache = cheb_forward(scaled, signal, params)
        grads = cheb_backward(scaled, params, upstream, cache)
        np.testing.assert_allclose(grads.theta, numeric_gradient(objective, params.theta), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(grads.shared, numeric_gradient(objective, params.shared), rtol=1e-6,
                                   atol=1e-7)

    def test_missing_cache(self):
        scaled = scaled_graph(10, 3, seed=12)
        params = init_cheb_params(3, 2, 2, RandomStream(12))
        with pytest.raises(MissingCacheError):
            cheb_backward(scaled, params, np.zeros((10, 2)), None)


class TestChebConvLayer:

    def test_parameter_names(self):
        layer = ChebConvLayer(3, 4, 3, RandomStream(13), 'gcn0')
        assert list(layer.parameters()) == ['gcn0.theta0', 'gcn0.theta1', 'gcn0.theta2', 'gcn0.bias']
        shared = ChebConvLayer(3, 4, 3, RandomStream(13), 'gcn1', scalar_theta=True)
        assert list(shared.parameters()) == ['gcn1.theta', 'gcn1.shared', 'gcn1.bias']

    def test_initialization_bound(self):
        layer = ChebConvLayer(6, 8, 3, RandomStream(14), 'gcn0')
        limit = glorot_limit(6, 8, 3)
        assert limit == pytest.approx(np.sqrt(6.0 / 26.0))
        for weight in layer.params.weights:
            assert np.abs(weight).max() <= limit
        np.testing.assert_array_equal(layer.params.bias, 0.0)

    def test_backward_returns_named_gradients(self):
        scaled = scaled_graph(16, 4, seed=15)
        layer = ChebConvLayer(3, 2, 2, RandomStream(15), 'gcn0', activation=RELU)
        out, cache = layer.forward(scaled, RandomStream(15, 1).normal((16, 3)))
        named, d_input = layer.backward(scaled, cache, np.ones_like(out))
        assert set(named) == set(layer.parameters())
        assert d_input.shape == (16, 3)

    def test_explicit_params(self):
        params = ChebLayerParams.scalar([1.0, 0.5], np.eye(2), np.zeros(2), activation=NO_ACTIVATION)
        np.testing.assert_allclose(params.effective_weights()[1], 0.5 * np.eye(2))
