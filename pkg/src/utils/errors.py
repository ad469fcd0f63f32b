"""
Exception hierarchy shared by every service and the command line
"""


class TiNetError(Exception):
    """Base class for all errors raised by this package"""


class DataError(TiNetError):
    """Bad input data: unreadable files, malformed manifests, degenerate clouds"""


class CloudFormatError(DataError):
    """A point cloud file failed to parse"""

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        location = ''
        if path is not None:
            location += f'{path}'
        if line_number is not None:
            location += f':{line_number}'
        super().__init__(f'{location}: {message}' if location else message)


class DegenerateCloudError(DataError, ValueError):
    """All points coincide, so the cloud has no scale"""


class ManifestError(DataError):
    """Dataset manifest is empty, malformed or references bad labels"""


class CheckpointError(DataError):
    """Checkpoint file is truncated or unreadable"""


class CheckpointVersionError(CheckpointError):
    """Checkpoint header does not match the supported format version"""


class CheckpointShapeError(CheckpointError):
    """A checkpoint tensor does not match the model architecture"""

    def __init__(self, tensor_name, expected, found):
        self.tensor_name = tensor_name
        self.expected = expected
        self.found = found
        super().__init__(
            f'tensor "{tensor_name}" has shape {found}, model expects {expected}'
        )


class GraphError(TiNetError, ValueError):
    """Graph construction failed (k out of range, zero sigma, zero degree, wrong kind)"""


class ShapeMismatchError(TiNetError, ValueError):
    """Operands have incompatible dimensions"""


class MissingCacheError(TiNetError, RuntimeError):
    """A backward pass was requested without the matching forward cache"""


class NumericalError(TiNetError, ArithmeticError):
    """Non-finite values appeared in activations, gradients or the loss"""

    def __init__(self, message, layer_index=None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f'layer {layer_index}: {message}'
        super().__init__(message)
