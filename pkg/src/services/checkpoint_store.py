"""
Checkpoint persistence for trained classifiers

File layout (text):
    3DTI-CKPT v1
    key=value key=value ...          model config plus meta.epoch / meta.seed
    name rows cols                   one header per tensor, declared order
    v v v ...                        `rows` lines of `cols` values, 17 significant digits

1-D tensors (biases, scalar thetas) are stored as 1 x F.
"""
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from src.config.settings import CHECKPOINT_HEADER
from src.services.classifier import ModelConfig, PointCloudClassifier
from src.utils.errors import CheckpointError, CheckpointShapeError, CheckpointVersionError
from src.utils.text_format import format_row

META_PREFIX = 'meta.'


@dataclass
class ModelCheckpoint:
    version: str
    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def epoch(self):
        return int(self.meta.get('epoch', 0))

    @property
    def seed(self):
        return int(self.meta.get('seed', 0))

    def to_model(self):
        """Fresh classifier built from the stored config with the stored tensors"""
        model = PointCloudClassifier(self.config)
        assign_tensors(model, self.tensors)
        return model


def _config_line(config, meta):
    tokens = [f'{key}={value}' for key, value in config.to_flat_items()]
    tokens += [f'{META_PREFIX}{key}={value}' for key, value in meta.items()]
    return ' '.join(tokens)


def save_checkpoint(model, path, epoch=0, seed=0):
    """Writes every parameter tensor of `model` in declared order"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    lines = [CHECKPOINT_HEADER, _config_line(model.config, {'epoch': epoch, 'seed': seed})]
    for name, tensor in model.parameters().items():
        matrix = np.atleast_2d(tensor)
        lines.append(f'{name} {matrix.shape[0]} {matrix.shape[1]}')
        lines.extend(format_row(row) for row in matrix)
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    return path


def _parse_config_line(line, path):
    model_values, meta = {}, {}
    for token in line.split():
        key, sep, value = token.partition('=')
        if not sep:
            raise CheckpointError(f'{path}: malformed config token {token!r}')
        if key.startswith(META_PREFIX):
            meta[key[len(META_PREFIX):]] = value
        else:
            model_values[key] = value
    try:
        return ModelConfig.from_mapping(model_values), meta
    except ValueError as e:
        raise CheckpointError(f'{path}: invalid stored config: {e}') from e


def _parse_tensors(lines, path):
    tensors = {}
    position = 0
    while position < len(lines):
        header = lines[position].split()
        if len(header) != 3:
            raise CheckpointError(f'{path}: malformed tensor header {lines[position]!r}')
        name = header[0]
        try:
            rows, cols = int(header[1]), int(header[2])
        except ValueError as e:
            raise CheckpointError(f'{path}: malformed tensor header {lines[position]!r}') from e
        body = lines[position + 1:position + 1 + rows]
        if len(body) != rows:
            raise CheckpointError(f'{path}: truncated tensor "{name}"')
        try:
            values = np.array([[float(v) for v in row.split()] for row in body], dtype=float)
        except ValueError as e:
            raise CheckpointError(f'{path}: unreadable values in tensor "{name}"') from e
        if values.shape != (rows, cols):
            raise CheckpointError(f'{path}: truncated tensor "{name}"')
        tensors[name] = values
        position += 1 + rows
    return tensors


def read_checkpoint(path):
    """Parses a checkpoint file without building a model"""
    try:
        with open(path, 'r') as f:
            lines = [line.rstrip('\n') for line in f]
    except OSError as e:
        raise CheckpointError(f'cannot read checkpoint {path}: {e}') from e
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        found = lines[0].strip() if lines else ''
        raise CheckpointVersionError(f'{path}: expected header "{CHECKPOINT_HEADER}", found "{found}"')
    if len(lines) < 2:
        raise CheckpointError(f'{path}: truncated before the config line')
    config, meta = _parse_config_line(lines[1], path)
    tensors = _parse_tensors(lines[2:], path)
    return ModelCheckpoint(lines[0].strip(), config, tensors, meta)


def assign_tensors(model, tensors):
    """Copies tensors into the model in place, checking names and shapes in declared order"""
    params = model.parameters()
    for name, expected in params.items():
        if name not in tensors:
            raise CheckpointShapeError(name, np.atleast_2d(expected).shape, None)
        found = tensors[name]
        if np.atleast_2d(expected).shape != found.shape:
            raise CheckpointShapeError(name, np.atleast_2d(expected).shape, found.shape)
    extra = [name for name in tensors if name not in params]
    if extra:
        raise CheckpointShapeError(extra[0], None, tensors[extra[0]].shape)
    model.copy_parameters_from({name: tensors[name].reshape(target.shape) for name, target in params.items()})
    return model


def load_checkpoint(path, model: Optional[PointCloudClassifier] = None):
    """Returns (model, checkpoint); with `model` given, its tensors are replaced in place"""
    checkpoint = read_checkpoint(path)
    if model is None:
        return checkpoint.to_model(), checkpoint
    return assign_tensors(model, checkpoint.tensors), checkpoint
