"""
Point cloud classifier

Pipeline: normalize -> kNN graph -> [TI encoder | raw coordinates] ->
Chebyshev GCN stack with TI-score pooling stages -> global max pool ->
three dense layers -> logits. Every stage has an analytic backward pass.
"""
import enum
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from src.config import settings
from src.services.cheb_gcn import RELU, ChebConvLayer, scale_laplacian
from src.services.graph_builder import LaplacianKind, graph_from_points, laplacian
from src.services.pointcloud_io import normalize_unit_sphere
from src.services.pooling import (
    GraphSpace,
    ScoreMode,
    coarsen,
    pool_backward,
    pool_features,
    rebuild_graph,
    ti_score,
)
from src.services.ti_encoder import FeatureScaling, TiLayer, raw_features, scale_features
from src.utils.errors import GraphError, MissingCacheError, NumericalError, ShapeMismatchError
from src.utils.random_streams import RandomStream


class InputMode(str, enum.Enum):
    TI_FEATURES = 'ti_features'
    RAW_COORDINATES = 'raw_coordinates'


def _as_int_tuple(value):
    if isinstance(value, str):
        value = [v for v in value.replace(' ', '').split(',') if v]
    return tuple(int(v) for v in value)


def _as_float_tuple(value):
    if isinstance(value, str):
        value = [v for v in value.replace(' ', '').split(',') if v]
    return tuple(float(v) for v in value)


def _as_bool(value):
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ('true', 'yes', '1'):
            return True
        if lowered in ('false', 'no', '0'):
            return False
        raise ValueError(f'not a boolean: {value!r}')
    return bool(value)


def _flat_value(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class FlatConfigMixin:
    """Coercion from flat key/value mappings (YAML files, checkpoint headers)"""

    _coercers: Dict[str, object] = {}

    @classmethod
    def from_mapping(cls, mapping, **overrides):
        known = {f.name for f in fields(cls)}
        values = dict(mapping or {})
        values.update(overrides)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f'unknown {cls.__name__} keys: {", ".join(unknown)}')
        coerced = {}
        for key, value in values.items():
            coercer = cls._coercers.get(key)
            coerced[key] = coercer(value) if coercer else value
        return cls(**coerced)

    def to_flat_items(self):
        return [(f.name, _flat_value(getattr(self, f.name))) for f in fields(self)]


@dataclass(frozen=True)
class ModelConfig(FlatConfigMixin):
    num_classes: int = 5
    input_mode: InputMode = InputMode.TI_FEATURES
    knn_k: int = settings.DEFAULT_KNN_K
    ti_order: int = settings.DEFAULT_TI_ORDER
    ti_channels: int = settings.DEFAULT_TI_CHANNELS
    include_order_zero: bool = settings.INCLUDE_ORDER_ZERO
    feature_scaling: FeatureScaling = FeatureScaling(settings.DEFAULT_FEATURE_SCALING)
    gcn_widths: Tuple[int, ...] = settings.DEFAULT_GCN_WIDTHS
    cheb_orders: Tuple[int, ...] = settings.DEFAULT_CHEB_ORDERS
    scalar_theta: bool = settings.SCALAR_THETA
    pool_after: Tuple[int, ...] = settings.DEFAULT_POOL_AFTER
    keep_ratio: float = settings.DEFAULT_KEEP_RATIO
    cluster_size: int = settings.DEFAULT_CLUSTER_SIZE
    rebuild_k: int = settings.DEFAULT_REBUILD_K
    pool_space: GraphSpace = GraphSpace(settings.DEFAULT_POOL_SPACE)
    score_mode: ScoreMode = ScoreMode(settings.DEFAULT_SCORE_MODE)
    head_widths: Tuple[int, ...] = settings.DEFAULT_HEAD_WIDTHS
    dropout_keep: float = settings.DEFAULT_DROPOUT_KEEP
    l2: float = settings.DEFAULT_L2
    init_seed: int = 0

    _coercers = {
        'num_classes': int, 'input_mode': InputMode, 'knn_k': int, 'ti_order': int,
        'ti_channels': int, 'include_order_zero': _as_bool, 'feature_scaling': FeatureScaling,
        'gcn_widths': _as_int_tuple, 'cheb_orders': _as_int_tuple, 'scalar_theta': _as_bool,
        'pool_after': _as_int_tuple, 'keep_ratio': float, 'cluster_size': int, 'rebuild_k': int,
        'pool_space': GraphSpace, 'score_mode': ScoreMode, 'head_widths': _as_int_tuple,
        'dropout_keep': float, 'l2': float, 'init_seed': int,
    }

    def __post_init__(self):
        object.__setattr__(self, 'input_mode', InputMode(self.input_mode))
        object.__setattr__(self, 'feature_scaling', FeatureScaling(self.feature_scaling))
        object.__setattr__(self, 'pool_space', GraphSpace(self.pool_space))
        object.__setattr__(self, 'score_mode', ScoreMode(self.score_mode))
        for name in ('gcn_widths', 'cheb_orders', 'pool_after', 'head_widths'):
            object.__setattr__(self, name, _as_int_tuple(getattr(self, name)))
        if self.num_classes < 2:
            raise ValueError('a classifier needs at least 2 classes')
        if not self.gcn_widths:
            raise ValueError('at least one GCN layer is required')
        if len(self.cheb_orders) != len(self.gcn_widths):
            raise ValueError('cheb_orders needs one entry per GCN layer')
        if any(k < 1 for k in self.cheb_orders) or self.ti_order < 1:
            raise ValueError('filter orders must be >= 1')
        if any(i < 0 or i >= len(self.gcn_widths) - 1 for i in self.pool_after):
            raise ValueError('pooling stages must follow a GCN layer that is not the last one')
        if len(set(self.pool_after)) != len(self.pool_after):
            raise ValueError('pool_after lists a layer twice')
        if not 0 < self.keep_ratio <= 1:
            raise ValueError('keep_ratio must be in (0, 1]')
        if not 0 < self.dropout_keep <= 1:
            raise ValueError('dropout_keep must be in (0, 1]')
        if self.l2 < 0:
            raise ValueError('l2 must be >= 0')
        if self.knn_k < 1 or self.rebuild_k < 1 or self.cluster_size < 1:
            raise ValueError('graph sizes must be >= 1')

    @classmethod
    def baseline(cls, num_classes, **overrides):
        """TI -> GCN(64) -> GCN(128) -> global max pool -> dense head"""
        values = dict(gcn_widths=(64, 128), cheb_orders=(3, 3), pool_after=())
        values.update(overrides)
        return cls(num_classes=num_classes, **values)

    @classmethod
    def full(cls, num_classes, **overrides):
        """TI -> GCN(64) -> pool(N/4, m=8) -> GCN(128) -> global max pool -> dense head"""
        values = dict(gcn_widths=(64, 128), cheb_orders=(3, 3), pool_after=(0,))
        values.update(overrides)
        return cls(num_classes=num_classes, **values)

    @property
    def input_channels(self):
        if self.input_mode == InputMode.RAW_COORDINATES:
            return 3
        terms = self.ti_order + (1 if self.include_order_zero else 0)
        return 2 * terms


@dataclass(frozen=True)
class TrainConfig(FlatConfigMixin):
    batch_size: int = settings.DEFAULT_BATCH_SIZE
    epochs: int = settings.DEFAULT_EPOCHS
    learning_rate: float = settings.DEFAULT_LEARNING_RATE
    momentum: float = settings.DEFAULT_MOMENTUM
    seed: int = settings.DEFAULT_SEED
    class_weighting: bool = settings.DEFAULT_CLASS_WEIGHTING
    rotation: str = settings.DEFAULT_TRAIN_ROTATION
    subsample_ratios: Tuple[float, ...] = settings.DEFAULT_SUBSAMPLE_RATIOS
    jitter_copies: Tuple[float, ...] = settings.DEFAULT_JITTER_COPIES

    _coercers = {
        'batch_size': int, 'epochs': int, 'learning_rate': float, 'momentum': float,
        'seed': int, 'class_weighting': _as_bool, 'rotation': str,
        'subsample_ratios': _as_float_tuple, 'jitter_copies': _as_float_tuple,
    }

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError('batch_size must be >= 1')
        if self.epochs < 0:
            raise ValueError('epochs must be >= 0')
        # 0 is accepted so a run can be checked to leave parameters untouched
        if self.learning_rate < 0:
            raise ValueError('learning_rate must be >= 0')
        if not 0 <= self.momentum < 1:
            raise ValueError('momentum must be in [0, 1)')
        if self.rotation not in ('none', 'z', 'so3'):
            raise ValueError(f'rotation must be none, z or so3, got {self.rotation!r}')
        object.__setattr__(self, 'subsample_ratios', _as_float_tuple(self.subsample_ratios))
        object.__setattr__(self, 'jitter_copies', _as_float_tuple(self.jitter_copies))
        if any(not 0 < r < 1 for r in self.subsample_ratios):
            raise ValueError('subsample_ratios must be in (0, 1)')
        if any(s < 0 for s in self.jitter_copies):
            raise ValueError('jitter_copies must be >= 0')


def split_flat_mapping(mapping):
    """Splits one flat experiment mapping into (model keys, train keys)"""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    model_part, train_part = {}, {}
    unknown = []
    for key, value in (mapping or {}).items():
        if key in model_keys:
            model_part[key] = value
        elif key in train_keys:
            train_part[key] = value
        else:
            unknown.append(key)
    if unknown:
        raise ValueError(f'unknown config keys: {", ".join(sorted(unknown))}')
    return model_part, train_part


# --------------------------------------- GEOMETRY CACHE ---------------------------------------

@dataclass
class Resolution:
    """One level of the multi-resolution pyramid"""
    points: np.ndarray
    scaled: Optional[object]
    plan: Optional[object] = None
    # coordinate graph used when a feature-space graph cannot be built
    fallback: Optional[object] = None


@dataclass
class PreparedCloud:
    """Parameter-independent geometry of one normalized cloud

    raw holds the unscaled features the pooling scores use; ti_input is what
    the TI layer sees after per-cloud scaling.
    """
    points: np.ndarray
    raw: Optional[object]
    levels: List[Resolution]
    label: Optional[int] = None
    ti_input: Optional[object] = None


@dataclass
class ForwardTrace:
    logits: np.ndarray
    descriptor: np.ndarray
    ti_cache: Optional[object] = None
    gcn_steps: List[tuple] = field(default_factory=list)
    pool_caches: Dict[int, object] = field(default_factory=dict)
    global_argmax: Optional[np.ndarray] = None
    final_nodes: int = 0
    dense_inputs: List[np.ndarray] = field(default_factory=list)
    dense_pre: List[np.ndarray] = field(default_factory=list)
    dropout_masks: List[Optional[np.ndarray]] = field(default_factory=list)


class DenseLayer:
    """y = x @ weight + bias on a single feature vector"""

    def __init__(self, in_features, out_features, stream, name):
        self.name = name
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = limit * (2.0 * stream.uniform((in_features, out_features)) - 1.0)
        self.bias = np.zeros(out_features)

    def parameters(self):
        return {f'{self.name}.weight': self.weight, f'{self.name}.bias': self.bias}

    def forward(self, x):
        return x @ self.weight + self.bias

    def backward(self, x, upstream):
        """Returns (named gradients, input gradient)"""
        grads = {f'{self.name}.weight': np.outer(x, upstream), f'{self.name}.bias': upstream.copy()}
        return grads, self.weight @ upstream


# -------------------------------------------- LOSS --------------------------------------------

def is_regularized(name):
    """Biases are excluded from the L2 penalty"""
    return not name.endswith('.bias')


def l2_penalty(params, coefficient):
    if coefficient == 0 or params is None:
        return 0.0
    return coefficient * sum(float(np.sum(p * p)) for name, p in params.items() if is_regularized(name))


def class_weights_from_labels(labels, num_classes):
    """Inverse class frequency normalized to mean 1 over present classes"""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=num_classes).astype(float)
    weights = np.ones(num_classes)
    present = counts > 0
    inverse = 1.0 / counts[present]
    weights[present] = inverse / inverse.mean()
    return weights


def loss(logits, label, class_weights=None, params=None, l2=0.0):
    """Weighted softmax cross-entropy plus l2 * sum of squared weights"""
    logits = np.asarray(logits, dtype=float)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f'label {label} outside [0, {logits.shape[0]})')
    weight = 1.0 if class_weights is None else float(class_weights[label])
    value = weight * (logsumexp(logits) - logits[label]) + l2_penalty(params, l2)
    if not np.isfinite(value):
        raise NumericalError('non-finite loss')
    return float(value)


def loss_gradient(logits, label, class_weights=None):
    """d loss / d logits of the cross-entropy term"""
    weight = 1.0 if class_weights is None else float(class_weights[label])
    grad = softmax(np.asarray(logits, dtype=float))
    grad[label] -= 1.0
    return weight * grad


# ------------------------------------------ CLASSIFIER ------------------------------------------

class PointCloudClassifier:
    """Full or baseline model in ti_features or raw_coordinates input mode"""

    def __init__(self, config):
        self.config = config
        stream = RandomStream(config.init_seed)
        self.ti_layer = None
        if config.input_mode == InputMode.TI_FEATURES:
            self.ti_layer = TiLayer(config.input_channels, config.ti_channels, stream.child(0))
            width = config.ti_channels
        else:
            width = config.input_channels

        self.gcn_layers = []
        for i, (out_width, order) in enumerate(zip(config.gcn_widths, config.cheb_orders)):
            self.gcn_layers.append(ChebConvLayer(width, out_width, order, stream.child(1, i),
                                                 name=f'gcn{i}', activation=RELU,
                                                 scalar_theta=config.scalar_theta))
            width = out_width

        self.dense_layers = []
        for j, out_width in enumerate(tuple(config.head_widths) + (config.num_classes,)):
            self.dense_layers.append(DenseLayer(width, out_width, stream.child(2, j), name=f'dense{j}'))
            width = out_width

    # ---------------------------------------- parameters ----------------------------------------

    def parameters(self):
        """Every trainable tensor in declared order; values are live references"""
        params = {}
        if self.ti_layer is not None:
            params.update(self.ti_layer.parameters())
        for layer in self.gcn_layers:
            params.update(layer.parameters())
        for layer in self.dense_layers:
            params.update(layer.parameters())
        return params

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters().values()))

    # ------------------------------------------ geometry ------------------------------------------

    def _needs_raw(self):
        return self.config.input_mode == InputMode.TI_FEATURES or bool(self.config.pool_after)

    def _raw_features(self, lap_rw, points):
        return raw_features(lap_rw, points - points.mean(axis=0), self.config.ti_order,
                            self.config.include_order_zero)

    def prepare(self, cloud):
        """Normalizes the cloud and builds every parameter-independent structure"""
        config = self.config
        points = normalize_unit_sphere(cloud).points
        graph = graph_from_points(points, config.knn_k)
        lap_rw = laplacian(graph, LaplacianKind.RANDOM_WALK)
        raw = self._raw_features(lap_rw, points) if self._needs_raw() else None

        levels = [Resolution(points, scale_laplacian(laplacian(graph, LaplacianKind.SYMMETRIC_NORMALIZED)))]
        level_raw = raw
        for stage, _ in enumerate(sorted(config.pool_after)):
            current = levels[-1]
            n = current.points.shape[0]
            num_keep = min(n, max(2, int(round(config.keep_ratio * n))))
            current.plan = coarsen(current.points, ti_score(level_raw, config.score_mode),
                                   num_keep, min(config.cluster_size, n))
            kept_points = current.points[current.plan.kept]
            coord_graph = graph_from_points(kept_points, config.rebuild_k)
            coord_scaled = scale_laplacian(laplacian(coord_graph, LaplacianKind.SYMMETRIC_NORMALIZED))
            if config.pool_space == GraphSpace.COORDINATES:
                levels.append(Resolution(kept_points, coord_scaled))
            else:
                levels.append(Resolution(kept_points, None, fallback=coord_scaled))
            if stage + 1 < len(config.pool_after):
                level_raw = self._raw_features(laplacian(coord_graph, LaplacianKind.RANDOM_WALK), kept_points)
        ti_input = None
        if config.input_mode == InputMode.TI_FEATURES:
            ti_input = scale_features(raw, config.feature_scaling)
        return PreparedCloud(points, raw, levels, cloud.label, ti_input)

    # ------------------------------------------ forward ------------------------------------------

    def forward_prepared(self, prepared, rotation=None, dropout_stream=None):
        """Runs the network on a prepared cloud

        rotation (3 x 3) is applied to the coordinate signal only; graph and
        TI features are invariant to it. dropout_stream enables training-mode
        inverted dropout on the hidden dense layers.
        """
        config = self.config
        trace = ForwardTrace(logits=None, descriptor=None)
        if self.ti_layer is not None:
            signal, trace.ti_cache = self.ti_layer.forward(prepared.ti_input)
        else:
            signal = prepared.points if rotation is None else prepared.points @ np.asarray(rotation).T

        level = 0
        scaled = prepared.levels[0].scaled
        for i, layer in enumerate(self.gcn_layers):
            signal, cache = layer.forward(scaled, signal, layer_index=i)
            trace.gcn_steps.append((scaled, cache))
            if i in config.pool_after:
                plan = prepared.levels[level].plan
                signal, cache = pool_features(plan, signal)
                trace.pool_caches[i] = (plan, cache)
                level += 1
                scaled = prepared.levels[level].scaled
                if scaled is None:
                    scaled = self._feature_laplacian(signal, prepared.levels[level])

        trace.final_nodes = signal.shape[0]
        trace.global_argmax = signal.argmax(axis=0)
        activation = signal.max(axis=0)
        trace.descriptor = activation.copy()

        last = len(self.dense_layers) - 1
        for j, dense in enumerate(self.dense_layers):
            trace.dense_inputs.append(activation)
            pre = dense.forward(activation)
            if not np.all(np.isfinite(pre)):
                raise NumericalError('non-finite dense activation', len(self.gcn_layers) + j)
            trace.dense_pre.append(pre)
            if j == last:
                activation = pre
                break
            activation = np.maximum(pre, 0.0)
            mask = None
            if dropout_stream is not None and config.dropout_keep < 1.0:
                mask = (dropout_stream.uniform(pre.shape) < config.dropout_keep) / config.dropout_keep
                activation = activation * mask
            trace.dropout_masks.append(mask)
        trace.logits = activation
        return trace

    def _feature_laplacian(self, signal, resolution):
        """Graph over the pooled feature rows; collapsed rows use the coordinate graph"""
        try:
            graph = rebuild_graph(np.arange(signal.shape[0]), self.config.rebuild_k,
                                  features=signal, space=GraphSpace.FEATURES)
            return scale_laplacian(laplacian(graph, LaplacianKind.SYMMETRIC_NORMALIZED))
        except GraphError:
            return resolution.fallback

    def forward(self, cloud):
        """Evaluation-mode (logits, descriptor) of a raw cloud"""
        trace = self.forward_prepared(self.prepare(cloud))
        return trace.logits, trace.descriptor

    def predict(self, cloud):
        return int(np.argmax(self.forward(cloud)[0]))

    # ------------------------------------------ backward ------------------------------------------

    def backward(self, trace, d_logits):
        """Gradients of every parameter for an upstream gradient on the logits"""
        if trace is None or trace.logits is None:
            raise MissingCacheError('backward needs the trace of a forward pass')
        d_logits = np.asarray(d_logits, dtype=float)
        if d_logits.shape != trace.logits.shape:
            raise ShapeMismatchError(f'logit gradient {d_logits.shape} vs logits {trace.logits.shape}')

        grads = {}
        upstream = d_logits
        for j in range(len(self.dense_layers) - 1, -1, -1):
            named, upstream = self.dense_layers[j].backward(trace.dense_inputs[j], upstream)
            grads.update(named)
            if j > 0:
                mask = trace.dropout_masks[j - 1]
                upstream = upstream * (trace.dense_pre[j - 1] > 0)
                if mask is not None:
                    upstream = upstream * mask

        d_nodes = np.zeros((trace.final_nodes, upstream.shape[0]))
        d_nodes[trace.global_argmax, np.arange(upstream.shape[0])] = upstream

        for i in range(len(self.gcn_layers) - 1, -1, -1):
            if i in trace.pool_caches:
                plan, cache = trace.pool_caches[i]
                d_nodes = pool_backward(plan, d_nodes, cache)
            scaled, cache = trace.gcn_steps[i]
            named, d_nodes = self.gcn_layers[i].backward(scaled, cache, d_nodes)
            grads.update(named)

        if self.ti_layer is not None:
            grads.update(self.ti_layer.backward(trace.ti_cache, d_nodes))
        return {name: grads[name] for name in self.parameters()}

    def gradients(self, prepared, label, class_weights=None, rotation=None, dropout_stream=None):
        """(loss, gradient set) of one sample, L2 term included"""
        trace = self.forward_prepared(prepared, rotation, dropout_stream)
        params = self.parameters()
        value = loss(trace.logits, label, class_weights, params, self.config.l2)
        grads = self.backward(trace, loss_gradient(trace.logits, label, class_weights))
        add_l2_gradient(grads, params, self.config.l2)
        return value, grads, trace

    def copy_parameters_from(self, values):
        """In-place assignment keeps the live references held by the layers"""
        params = self.parameters()
        for name, value in values.items():
            params[name][...] = value


def add_l2_gradient(grads, params, coefficient):
    if coefficient == 0:
        return grads
    for name, value in params.items():
        if is_regularized(name):
            grads[name] = grads[name] + 2.0 * coefficient * value
    return grads
