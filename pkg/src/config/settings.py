"""Configuration settings for the transform-invariant point cloud pipeline

This module loads project defaults from config.yaml so that graph sizes,
filter orders and training hyper-parameters live outside the source code.
Experiment files given on the command line are flat overrides on top.
"""

import copy
import os
from pathlib import Path

import yaml

# Get project root directory
PROJECT_ROOT = Path(__file__).parent.parent.parent
CONFIG_FILE = Path(os.environ.get('TINET_CONFIG', PROJECT_ROOT / 'config.yaml'))

# Built-in defaults, overridden section by section by config.yaml
DEFAULTS = {
    'graph': {
        'k': 16,
    },
    'ti_encoder': {
        'order': 3,
        'channels': 32,
        'include_order_zero': False,
        'direction_eps': 1e-12,
        'feature_scaling': 'cloud_mean',
    },
    'gcn': {
        'widths': [64, 128],
        'cheb_orders': [3, 3],
        'scalar_theta': False,
    },
    'pooling': {
        'after_layers': [0],
        'keep_ratio': 0.25,
        'cluster_size': 8,
        'rebuild_k': 16,
        'space': 'coordinates',
        'score': 'contour',
    },
    'head': {
        'widths': [256, 64],
        'dropout_keep': 0.7,
        'l2': 0.0005,
    },
    'training': {
        'batch_size': 16,
        'epochs': 400,
        'learning_rate': 0.01,
        'momentum': 0.9,
        'seed': 0,
        'class_weighting': True,
        'rotation': 'z',
        'subsample_ratios': [],
        'jitter_copies': [],
    },
    'dataset': {
        'classes': ['sphere', 'cube', 'cylinder', 'cone', 'torus'],
        'points': 512,
        'jitter': 0.01,
        'manifest_name': 'manifest.tsv',
    },
    'runtime': {
        'threads': 1,
    },
}


def _merge(base, override):
    """Recursively merge override into a copy of base"""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_yaml_file(path):
    """Load a YAML mapping from path"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"Configuration file not found: {path}\n"
            f"Copy config.yaml from the project root and adjust the values you need."
        )

    with open(path, 'r', encoding='utf-8') as file:
        data = yaml.safe_load(file)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"Configuration file {path} must contain a mapping")
    return data


def load_config(path=None):
    """Load configuration from config.yaml merged over the built-in defaults"""
    if path is None:
        if not CONFIG_FILE.exists():
            return copy.deepcopy(DEFAULTS)
        path = CONFIG_FILE
    return _merge(DEFAULTS, load_yaml_file(path))


# Load the configuration
config = load_config()

# ----------------------------------------- GRAPH SETUP ------------------------------------------

DEFAULT_KNN_K = config['graph']['k']

# -------------------------------------- TI ENCODER SETUP --------------------------------------

DEFAULT_TI_ORDER = config['ti_encoder']['order']
DEFAULT_TI_CHANNELS = config['ti_encoder']['channels']
INCLUDE_ORDER_ZERO = config['ti_encoder']['include_order_zero']
DIRECTION_EPS = config['ti_encoder']['direction_eps']
DEFAULT_FEATURE_SCALING = config['ti_encoder']['feature_scaling']

# ----------------------------------------- GCN SETUP -----------------------------------------

DEFAULT_GCN_WIDTHS = tuple(config['gcn']['widths'])
DEFAULT_CHEB_ORDERS = tuple(config['gcn']['cheb_orders'])
SCALAR_THETA = config['gcn']['scalar_theta']

# --------------------------------------- POOLING SETUP ---------------------------------------

DEFAULT_POOL_AFTER = tuple(config['pooling']['after_layers'])
DEFAULT_KEEP_RATIO = config['pooling']['keep_ratio']
DEFAULT_CLUSTER_SIZE = config['pooling']['cluster_size']
DEFAULT_REBUILD_K = config['pooling']['rebuild_k']
DEFAULT_POOL_SPACE = config['pooling']['space']
DEFAULT_SCORE_MODE = config['pooling']['score']

# ---------------------------------------- HEAD SETUP -----------------------------------------

DEFAULT_HEAD_WIDTHS = tuple(config['head']['widths'])
DEFAULT_DROPOUT_KEEP = config['head']['dropout_keep']
DEFAULT_L2 = config['head']['l2']

# -------------------------------------- TRAINING SETUP --------------------------------------

DEFAULT_BATCH_SIZE = config['training']['batch_size']
DEFAULT_EPOCHS = config['training']['epochs']
DEFAULT_LEARNING_RATE = config['training']['learning_rate']
DEFAULT_MOMENTUM = config['training']['momentum']
DEFAULT_SEED = config['training']['seed']
DEFAULT_CLASS_WEIGHTING = config['training']['class_weighting']
DEFAULT_TRAIN_ROTATION = config['training']['rotation']
DEFAULT_SUBSAMPLE_RATIOS = tuple(config['training']['subsample_ratios'])
DEFAULT_JITTER_COPIES = tuple(config['training']['jitter_copies'])

# --------------------------------------- DATASET SETUP ---------------------------------------

DEFAULT_SHAPE_CLASSES = tuple(config['dataset']['classes'])
DEFAULT_POINTS = config['dataset']['points']
DEFAULT_JITTER = config['dataset']['jitter']
MANIFEST_NAME = config['dataset']['manifest_name']

# ------------------------------ ADDITIONAL CONSTANTS -----------------------------

DEFAULT_THREADS = config['runtime']['threads']

# Checkpoint text format
CHECKPOINT_HEADER = '3DTI-CKPT v1'

# Metrics log columns
METRICS_COLUMNS = ('epoch', 'train_loss', 'train_acc', 'val_acc')
