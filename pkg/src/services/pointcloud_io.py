"""
Point cloud service: loading, writing, normalization, rigid transforms,
jitter and the synthetic shape generator used for desk-scale experiments
"""
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from src.utils.errors import CloudFormatError, DegenerateCloudError, ManifestError
from src.utils.random_streams import RandomStream, as_stream
from src.utils.text_format import format_row


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PointCloud:
    """N points x 3 coordinates, optional per-point attributes and class label"""
    points: np.ndarray
    attributes: Optional[np.ndarray] = None
    label: Optional[int] = None

    def __post_init__(self):
        points = _frozen(self.points)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f'points must be N x 3, got shape {points.shape}')
        if not np.all(np.isfinite(points)):
            raise ValueError('point coordinates must be finite')
        object.__setattr__(self, 'points', points)
        if self.attributes is not None:
            attributes = _frozen(self.attributes)
            if attributes.ndim == 1:
                attributes = _frozen(attributes.reshape(-1, 1))
            if attributes.shape[0] != points.shape[0]:
                raise ValueError('attributes must have one row per point')
            object.__setattr__(self, 'attributes', attributes)

    @property
    def num_points(self):
        return self.points.shape[0]

    def with_points(self, points):
        """Same attributes and label, new coordinates"""
        return PointCloud(points, self.attributes, self.label)

    def take(self, indices):
        """Rows `indices` of points and attributes, same label"""
        attributes = None if self.attributes is None else self.attributes[indices]
        return PointCloud(self.points[indices], attributes, self.label)

    def with_label(self, label):
        return PointCloud(self.points, self.attributes, label)


@dataclass(frozen=True)
class RigidTransform:
    """x -> rotation @ x + translation"""
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = _frozen(self.rotation)
        translation = _frozen(self.translation)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError('rotation must be 3 x 3 and translation a 3-vector')
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-9):
            raise ValueError('rotation is not orthonormal')
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise ValueError('rotation must have determinant +1')
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


class RotationMode(str, enum.Enum):
    NONE = 'none'
    AZIMUTHAL_Z = 'z'
    UNIFORM_SO3 = 'so3'


class ShapeKind(str, enum.Enum):
    SPHERE = 'sphere'
    CUBE = 'cube'
    CYLINDER = 'cylinder'
    CONE = 'cone'
    TORUS = 'torus'


@dataclass(frozen=True)
class SyntheticShapeSpec:
    kind: ShapeKind
    num_points: int
    seed: int
    jitter_sigma: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', ShapeKind(self.kind))
        except ValueError:
            raise ValueError(f'unknown shape kind: {self.kind!r}') from None
        if self.jitter_sigma < 0:
            raise ValueError('jitter sigma must be >= 0')


# ------------------------------------- FILE FORMATS -------------------------------------

def _parse_reals(tokens, path, line_number):
    values = []
    for token in tokens:
        try:
            value = float(token)
        except ValueError:
            raise CloudFormatError(f'non-numeric token {token!r}', path, line_number) from None
        if not np.isfinite(value):
            raise CloudFormatError(f'non-finite value {token!r}', path, line_number)
        values.append(value)
    return values


def _read_xyz(lines, path):
    rows = []
    width = None
    for line_number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        tokens = stripped.split()
        if len(tokens) < 3:
            raise CloudFormatError(f'expected at least 3 values, got {len(tokens)}', path, line_number)
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise CloudFormatError(f'expected {width} columns, got {len(tokens)}', path, line_number)
        rows.append(_parse_reals(tokens, path, line_number))
    if len(rows) < 2:
        raise CloudFormatError(f'a cloud needs at least 2 points, found {len(rows)}', path)
    data = np.array(rows, dtype=float)
    attributes = data[:, 3:] if data.shape[1] > 3 else None
    return PointCloud(data[:, :3], attributes)


def _content_lines(lines):
    """(line_number, tokens) for non-blank, non-comment lines"""
    for line_number, line in enumerate(lines, start=1):
        stripped = line.split('#', 1)[0].strip()
        if stripped:
            yield line_number, stripped.split()


def _read_off(lines, path):
    content = _content_lines(lines)
    try:
        line_number, tokens = next(content)
    except StopIteration:
        raise CloudFormatError('empty file', path, 1) from None

    header = tokens[0]
    if not header.upper().startswith('OFF'):
        raise CloudFormatError(f'malformed header {header!r}, expected "OFF"', path, line_number)
    # Some exporters glue the counts onto the header ("OFF8 6 0")
    counts = ([header[3:]] if len(header) > 3 else []) + tokens[1:]
    if not counts:
        try:
            line_number, counts = next(content)
        except StopIteration:
            raise CloudFormatError('missing counts line', path, line_number + 1) from None
    if len(counts) < 2:
        raise CloudFormatError('counts line must hold "V F E"', path, line_number)
    try:
        num_vertices = int(counts[0])
    except ValueError:
        raise CloudFormatError(f'non-numeric vertex count {counts[0]!r}', path, line_number) from None

    rows = []
    for _ in range(num_vertices):
        try:
            line_number, tokens = next(content)
        except StopIteration:
            raise CloudFormatError(
                f'expected {num_vertices} vertices, file ends after {len(rows)}', path, line_number + 1
            ) from None
        if len(tokens) < 3:
            raise CloudFormatError('vertex line needs 3 coordinates', path, line_number)
        rows.append(_parse_reals(tokens[:3], path, line_number))
    # Faces are not needed: the pipeline consumes raw point sets
    if len(rows) < 2:
        raise CloudFormatError(f'a cloud needs at least 2 points, found {len(rows)}', path)
    return PointCloud(np.array(rows, dtype=float))


def load_cloud(path, fmt=None, label=None):
    """Reads an .xyz or .off file; fmt defaults to the file extension"""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip('.')).lower()
    if fmt not in ('xyz', 'off'):
        raise CloudFormatError(f'unsupported format {fmt!r}', path)
    try:
        with open(path, 'r', encoding='utf-8') as file:
            lines = file.readlines()
    except UnicodeDecodeError as e:
        raise CloudFormatError(f'not UTF-8 text: {e}', path) from None
    cloud = _read_xyz(lines, path) if fmt == 'xyz' else _read_off(lines, path)
    return cloud if label is None else cloud.with_label(label)


def write_xyz(cloud, path):
    """Writes coordinates (and attributes) at 17 significant digits"""
    data = cloud.points
    if cloud.attributes is not None:
        data = np.hstack([data, cloud.attributes])
    with open(path, 'w', encoding='utf-8') as file:
        for row in data:
            file.write(format_row(row) + '\n')


def read_manifest(path):
    """Returns [(cloud_path, label)] from a "path<TAB>label" manifest"""
    path = Path(path)
    entries = []
    with open(path, 'r', encoding='utf-8') as file:
        for line_number, line in enumerate(file, start=1):
            line = line.rstrip('\n')
            if not line.strip() or line.startswith('#'):
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise ManifestError(f'{path}:{line_number}: expected "path<TAB>label"')
            try:
                label = int(parts[1])
            except ValueError:
                raise ManifestError(f'{path}:{line_number}: label {parts[1]!r} is not an integer') from None
            if label < 0:
                raise ManifestError(f'{path}:{line_number}: negative label {label}')
            cloud_path = Path(parts[0])
            if not cloud_path.is_absolute():
                cloud_path = path.parent / cloud_path
            entries.append((cloud_path, label))
    if not entries:
        raise ManifestError(f'{path}: manifest lists no clouds')
    return entries


def write_manifest(path, entries):
    """Writes [(relative_path, label)] as a manifest"""
    with open(path, 'w', encoding='utf-8') as file:
        for cloud_path, label in entries:
            file.write(f'{Path(cloud_path).as_posix()}\t{int(label)}\n')


def load_dataset(manifest_path):
    """Loads every cloud listed in a manifest, labels attached"""
    return [load_cloud(cloud_path, label=label) for cloud_path, label in read_manifest(manifest_path)]


# --------------------------------------- GEOMETRY ---------------------------------------

def recenter(cloud):
    """Subtracts the centroid"""
    return cloud.with_points(cloud.points - cloud.points.mean(axis=0))


def normalize_unit_sphere(cloud):
    """Recenters, then scales so the farthest point has norm 1"""
    centered = cloud.points - cloud.points.mean(axis=0)
    scale = np.sqrt((centered ** 2).sum(axis=1)).max()
    if not scale > 0:
        raise DegenerateCloudError('cloud has zero spread, cannot normalize')
    return cloud.with_points(centered / scale)


def pairwise_distances(cloud):
    """Condensed pairwise Euclidean distances"""
    return pdist(cloud.points)


def _rotation_from_quaternion(w, x, y, z):
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(stream, mode=RotationMode.UNIFORM_SO3, translation_scale=0.0):
    """Random rigid transform

    azimuthal mode rotates about z by an angle uniform in [0, 2pi).
    so3 mode draws 4 Box-Muller normals in (w, x, y, z) order and converts the
    normalized quaternion, which is Haar-uniform. A translation uniform in
    [-translation_scale, translation_scale]^3 is drawn afterwards when requested.
    """
    stream = as_stream(stream)
    mode = RotationMode(mode)
    if mode == RotationMode.NONE:
        rotation = np.eye(3)
    elif mode == RotationMode.AZIMUTHAL_Z:
        angle = 2.0 * np.pi * stream.uniform()
        c, s = np.cos(angle), np.sin(angle)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    else:
        q = stream.normal(4)
        q = q / np.linalg.norm(q)
        rotation = _rotation_from_quaternion(*q)
    translation = np.zeros(3)
    if translation_scale > 0:
        translation = translation_scale * (2.0 * stream.uniform(3) - 1.0)
    return RigidTransform(rotation, translation)


def apply_transform(cloud, transform):
    """Each point -> rotation @ point + translation; attributes untouched"""
    return cloud.with_points(cloud.points @ transform.rotation.T + transform.translation)


def jitter(cloud, sigma, seed):
    """Adds i.i.d. N(0, sigma^2) noise per coordinate"""
    if sigma < 0:
        raise ValueError(f'jitter sigma must be >= 0, got {sigma}')
    if sigma == 0:
        return cloud
    noise = as_stream(seed).normal(cloud.points.shape)
    return cloud.with_points(cloud.points + sigma * noise)


# ----------------------------------- SYNTHETIC SHAPES -----------------------------------

TORUS_MAJOR_RADIUS = 1.0
TORUS_MINOR_RADIUS = 0.4

# Shapes symmetric under x -> -x are sampled in antipodal pairs so the sample
# centroid is the exact shape centre; odd counts end with a zero-sum surface triple
CENTRALLY_SYMMETRIC = {ShapeKind.SPHERE, ShapeKind.CUBE, ShapeKind.CYLINDER, ShapeKind.TORUS}


def _sample_sphere(stream, n):
    v = stream.normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_cube(stream, n):
    """Half-width 1, faces equally likely (equal areas)"""
    u = stream.uniform((n, 3))
    face = np.minimum((u[:, 0] * 6).astype(int), 5)
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    points = np.empty((n, 3))
    for a in range(3):
        others = [b for b in range(3) if b != a]
        rows = axis == a
        points[rows, a] = sign[rows]
        points[rows, others[0]] = 2.0 * u[rows, 1] - 1.0
        points[rows, others[1]] = 2.0 * u[rows, 2] - 1.0
    return points


def _sample_disk(u_radius, u_angle):
    radius = np.sqrt(u_radius)
    angle = 2.0 * np.pi * u_angle
    return radius * np.cos(angle), radius * np.sin(angle)


def _sample_cylinder(stream, n):
    """Radius 1, z in [-1, 1], caps included; side area 4pi vs caps 2pi"""
    u = stream.uniform((n, 3))
    points = np.empty((n, 3))
    side = u[:, 0] < 4.0 / 6.0
    angle = 2.0 * np.pi * u[side, 1]
    points[side] = np.column_stack([np.cos(angle), np.sin(angle), 2.0 * u[side, 2] - 1.0])
    caps = ~side
    x, y = _sample_disk(u[caps, 1], u[caps, 2])
    z = np.where(u[caps, 0] < 5.0 / 6.0, 1.0, -1.0)
    points[caps] = np.column_stack([x, y, z])
    return points


def _sample_cone(stream, n):
    """Apex (0, 0, 1), base radius 1 at z = -1; lateral area pi*sqrt(5) vs base pi"""
    u = stream.uniform((n, 3))
    lateral_share = np.sqrt(5.0) / (np.sqrt(5.0) + 1.0)
    points = np.empty((n, 3))
    lateral = u[:, 0] < lateral_share
    t = np.sqrt(u[lateral, 1])
    angle = 2.0 * np.pi * u[lateral, 2]
    points[lateral] = np.column_stack([t * np.cos(angle), t * np.sin(angle), 1.0 - 2.0 * t])
    base = ~lateral
    x, y = _sample_disk(u[base, 1], u[base, 2])
    points[base] = np.column_stack([x, y, -np.ones(base.sum())])
    return points


def _sample_torus(stream, n):
    """Area-correct rejection: accept (theta, phi) with prob (R + r cos theta) / (R + r)"""
    R, r = TORUS_MAJOR_RADIUS, TORUS_MINOR_RADIUS
    accepted = []
    count = 0
    while count < n:
        u = stream.uniform((2 * (n - count) + 16, 3))
        theta = 2.0 * np.pi * u[:, 0]
        phi = 2.0 * np.pi * u[:, 1]
        keep = u[:, 2] * (R + r) < R + r * np.cos(theta)
        theta, phi = theta[keep], phi[keep]
        ring = R + r * np.cos(theta)
        accepted.append(np.column_stack([ring * np.cos(phi), ring * np.sin(phi), r * np.sin(theta)]))
        count += keep.sum()
    return np.vstack(accepted)[:n]


def _balanced_triple(kind, stream):
    """Three surface points summing to zero"""
    u = stream.uniform(2)
    if kind == ShapeKind.CUBE:
        # cyclic coordinate shifts of a face point orthogonal to (1, 1, 1)
        face_point = np.array([1.0, -u[0], u[0] - 1.0])
        return np.vstack([face_point, np.roll(face_point, 1), np.roll(face_point, 2)])
    radius = TORUS_MAJOR_RADIUS + TORUS_MINOR_RADIUS if kind == ShapeKind.TORUS else 1.0
    angle = 2.0 * np.pi * u[1] + 2.0 * np.pi / 3.0 * np.arange(3)
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle), np.zeros(3)])


SHAPE_SAMPLERS = {
    ShapeKind.SPHERE: _sample_sphere,
    ShapeKind.CUBE: _sample_cube,
    ShapeKind.CYLINDER: _sample_cylinder,
    ShapeKind.CONE: _sample_cone,
    ShapeKind.TORUS: _sample_torus,
}


def generate_shape(spec, label=None):
    """Uniform surface sample of spec.kind, normalized to the unit sphere, then jittered"""
    if spec.num_points < 8:
        raise ValueError(f'synthetic shapes need at least 8 points, got {spec.num_points}')
    stream = RandomStream(spec.seed)
    sampler = SHAPE_SAMPLERS[spec.kind]
    n = spec.num_points
    if spec.kind in CENTRALLY_SYMMETRIC:
        half = sampler(stream, n // 2 if n % 2 == 0 else (n - 3) // 2)
        parts = [half, -half]
        if n % 2:
            parts.append(_balanced_triple(spec.kind, stream))
        points = np.vstack(parts)
    else:
        points = sampler(stream, n)
    cloud = normalize_unit_sphere(PointCloud(points, label=label))
    return jitter(cloud, spec.jitter_sigma, stream.child(1))
