"""Point clouds: file I/O, intensity normalisation, rotation and pillar encoding."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, HeaderError, TruncatedError
from .grid import GridSpec, GroundTruthGrid, Label, cell_centers, world_to_cell_array

FEATURE_DIM = 9


@dataclass
class PointCloud:
    """Lidar returns in the sensor frame.

    ``points`` is (N, 4): x, y, z, intensity. Ground lies at z = -sensor_height.
    Simulated clouds additionally carry per-point ``material`` and
    ``object_id`` (-1 for ground returns).
    """

    points: np.ndarray = field(repr=False)
    sensor_height: float = 1.9
    material: np.ndarray | None = field(default=None, repr=False)
    object_id: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        if not np.all(np.isfinite(self.points)):
            raise DomainError("point coordinates must be finite")
        if not (math.isfinite(self.sensor_height) and self.sensor_height > 0):
            raise DomainError("sensor_height must be positive")
        n = len(self.points)
        for name in ("material", "object_id"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr).reshape(-1)
                if len(arr) != n:
                    raise DimensionError(f"{name} has {len(arr)} entries for {n} points")
                setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    @property
    def labeled(self) -> bool:
        return self.material is not None and self.object_id is not None

    def subset(self, mask) -> "PointCloud":
        return PointCloud(
            self.points[mask],
            self.sensor_height,
            None if self.material is None else self.material[mask],
            None if self.object_id is None else self.object_id[mask],
        )


# ---------------------------------------------------------------------- I/O

_MAGIC = b"EVPC"
_VERSION = 1
_HEADER = struct.Struct("<4sBIf")


def cloud_to_bytes(cloud: PointCloud) -> bytes:
    header = _HEADER.pack(_MAGIC, _VERSION, len(cloud), cloud.sensor_height)
    return header + cloud.points.astype("<f4").tobytes()


def cloud_from_bytes(data: bytes) -> PointCloud:
    if len(data) < _HEADER.size:
        raise TruncatedError("file shorter than the point-cloud header")
    magic, version, count, height = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise HeaderError(f"unsupported point-cloud version {version}")
    payload = data[_HEADER.size:]
    if len(payload) < 16 * count:
        raise TruncatedError(f"header declares {count} points, payload holds {len(payload) // 16}")
    if len(payload) > 16 * count:
        raise DimensionError("trailing bytes after the declared points")
    pts = np.frombuffer(payload, dtype="<f4").reshape(count, 4).astype(np.float64)
    return PointCloud(pts, float(str(np.float32(height))))


def save_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(cloud_to_bytes(cloud))


def load_cloud(path) -> PointCloud:
    return cloud_from_bytes(Path(path).read_bytes())


# ----------------------------------------------------------- transformations


def normalize_intensity(cloud: PointCloud, scale_percentile: float = 99.0) -> PointCloud:
    """Divide intensities by their given percentile and clamp to [0, 1]."""
    if len(cloud) == 0:
        return cloud
    inten = cloud.intensity
    scale = float(np.percentile(inten, scale_percentile))
    if scale <= 0.0:
        scale = float(inten.max())
    if scale <= 0.0:
        return replace(cloud, points=cloud.points.copy())
    pts = cloud.points.copy()
    pts[:, 3] = np.clip(inten / scale, 0.0, 1.0)
    return replace(cloud, points=pts)


_QUARTER_TURNS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def _cos_sin(angle: float) -> tuple[float, float]:
    """cos and sin, exact at multiples of a quarter turn."""
    k = angle / (math.pi / 2)
    if abs(k - round(k)) < 1e-12:
        return _QUARTER_TURNS[round(k) % 4]
    return math.cos(angle), math.sin(angle)


def rotate_z(cloud: PointCloud, angle: float) -> PointCloud:
    """Rotate about the vertical axis through the sensor; z and intensity untouched.

    Quarter turns are applied exactly, so coordinates only swap and negate.
    """
    if not math.isfinite(angle):
        raise DomainError("rotation angle must be finite")
    c, s = _cos_sin(angle)
    pts = cloud.points.copy()
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    pts[:, 0] = c * x - s * y
    pts[:, 1] = s * x + c * y
    return replace(cloud, points=pts)


def rotate_label_grid(grid: GroundTruthGrid, angle: float) -> GroundTruthGrid:
    """Nearest-neighbour resampling of a label grid rotated by ``angle``.

    Each destination cell centre is rotated back by -angle and looked up
    in the source; lookups outside the grid become Unknown.
    """
    if not math.isfinite(angle):
        raise DomainError("rotation angle must be finite")
    spec = grid.spec
    xs, ys = cell_centers(spec)
    c, s = _cos_sin(angle)
    src_x = c * xs + s * ys
    src_y = -s * xs + c * ys
    r, col, inside = world_to_cell_array(spec, src_x, src_y)
    out = np.full(spec.shape, Label.UNKNOWN, dtype=np.uint8)
    out[inside] = grid.labels[r[inside], col[inside]]
    return GroundTruthGrid(spec, out)


# ----------------------------------------------------------------- pillars


@dataclass
class PillarSet:
    """Dense pillar tensor for one cloud.

    ``features`` is (max_pillars, max_points, 9) holding per point
    x, y, z, intensity, offsets to the pillar mean (3) and offsets to the
    cell centre (2). Occupied pillars are packed first in row-major cell
    order; unused pillar slots carry cell index (-1, -1).
    """

    spec: GridSpec
    features: np.ndarray = field(repr=False)
    cell_index: np.ndarray = field(repr=False)
    point_mask: np.ndarray = field(repr=False)

    @property
    def max_pillars(self) -> int:
        return self.features.shape[0]

    @property
    def max_points(self) -> int:
        return self.features.shape[1]

    @property
    def n_pillars(self) -> int:
        return int(np.count_nonzero(self.cell_index[:, 0] >= 0))


def pillarize(
    cloud: PointCloud,
    spec: GridSpec,
    max_pillars: int = 10000,
    max_points: int = 100,
    rng_seed: int = 0,
    feature_dim: int = FEATURE_DIM,
    dtype=np.float32,
) -> PillarSet:
    """Bucket points by grid cell and build the 9-dimensional pillar features.

    Points outside the grid are dropped. Overfull pillars are subsampled
    and surplus pillars dropped at random, reproducibly for a given seed.
    """
    if feature_dim != FEATURE_DIM:
        raise ConfigError(f"feature_dim must be {FEATURE_DIM}, got {feature_dim}")
    if max_pillars <= 0 or max_points <= 0:
        raise ConfigError("pillar limits must be positive")
    rng = np.random.Generator(np.random.Philox(rng_seed))

    pts = cloud.points
    r, c, inside = world_to_cell_array(spec, pts[:, 0], pts[:, 1])
    pts, r, c = pts[inside], r[inside], c[inside]
    cell = r * spec.cols + c

    # random rank inside each pillar; keep the first max_points
    key = rng.random(len(pts))
    order = np.lexsort((key, cell))
    cell_sorted = cell[order]
    starts = np.flatnonzero(np.r_[True, cell_sorted[1:] != cell_sorted[:-1]]) if len(order) else np.array([], int)
    counts = np.diff(np.r_[starts, len(order)])
    rank = np.arange(len(order)) - np.repeat(starts, counts)
    keep = order[rank < max_points]

    unique_cells = cell_sorted[starts]
    if len(unique_cells) > max_pillars:
        chosen = np.sort(rng.choice(len(unique_cells), size=max_pillars, replace=False))
        unique_cells = unique_cells[chosen]
        keep = keep[np.isin(cell[keep], unique_cells)]

    # restore original point order inside each pillar
    keep = keep[np.lexsort((keep, cell[keep]))]
    kept_cell = cell[keep]
    kept = pts[keep]
    pillar_of = np.searchsorted(unique_cells, kept_cell)
    p_starts = np.flatnonzero(np.r_[True, kept_cell[1:] != kept_cell[:-1]]) if len(keep) else np.array([], int)
    p_counts = np.diff(np.r_[p_starts, len(keep)])
    slot = np.arange(len(keep)) - np.repeat(p_starts, p_counts)

    n_p = len(unique_cells)
    sums = np.zeros((n_p, 3))
    np.add.at(sums, pillar_of, kept[:, :3])
    means = sums / np.maximum(p_counts, 1)[:, None]
    pr = unique_cells // spec.cols
    pc = unique_cells % spec.cols
    cx = (pr + 0.5 - spec.rows / 2) * spec.cell_m
    cy = (pc + 0.5 - spec.cols / 2) * spec.cell_m

    feats = np.zeros((len(keep), FEATURE_DIM))
    feats[:, :4] = kept
    feats[:, 4:7] = kept[:, :3] - means[pillar_of]
    feats[:, 7] = kept[:, 0] - cx[pillar_of]
    feats[:, 8] = kept[:, 1] - cy[pillar_of]

    features = np.zeros((max_pillars, max_points, FEATURE_DIM), dtype=dtype)
    mask = np.zeros((max_pillars, max_points), dtype=bool)
    features[pillar_of, slot] = feats
    mask[pillar_of, slot] = True
    index = np.full((max_pillars, 2), -1, dtype=np.int64)
    index[:n_p, 0] = pr
    index[:n_p, 1] = pc
    return PillarSet(spec, features, index, mask)
