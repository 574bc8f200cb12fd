"""Metric grid geometry, evidential and label rasters, ray traversal, I/O.

Axis convention: rows follow the vehicle forward axis x, columns the
left axis y. The sensor sits on the lattice vertex at the grid centre,
so cell (rows/2, cols/2) is the cell whose lower corner is the origin.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, HeaderError, TruncatedError
from .evidential import evidence_to_mass_array

_EXTENT_TOL = 1e-9


class Label(enum.IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry; defaults give 512 x 352 cells of 0.16 m (81.92 m x 56.32 m)."""

    rows: int = 512
    cols: int = 352
    cell_m: float = 0.16

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise DomainError("grid must have at least one row and column")
        if self.rows % 2 or self.cols % 2:
            raise DomainError("rows and cols must be even so the origin is a cell corner")
        if not (math.isfinite(self.cell_m) and self.cell_m > 0):
            raise DomainError("cell size must be positive")

    @classmethod
    def from_extent(cls, length_m: float, width_m: float, cell_m: float) -> "GridSpec":
        rows = round(length_m / cell_m)
        cols = round(width_m / cell_m)
        if abs(rows * cell_m - length_m) > _EXTENT_TOL * max(1.0, length_m) or abs(
            cols * cell_m - width_m
        ) > _EXTENT_TOL * max(1.0, width_m):
            raise DomainError("extents must be integer multiples of the cell size")
        return cls(rows, cols, cell_m)

    @property
    def length_m(self) -> float:
        return self.rows * self.cell_m

    @property
    def width_m(self) -> float:
        return self.cols * self.cell_m

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def to_units(self, x, y):
        """World metres to continuous grid units (cell index space)."""
        return (
            np.asarray(x, dtype=np.float64) / self.cell_m + self.rows / 2,
            np.asarray(y, dtype=np.float64) / self.cell_m + self.cols / 2,
        )

    def as_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "cell_m": self.cell_m}


DESK_SPEC = GridSpec(128, 88, 0.64)


@dataclass
class EvidentialGrid:
    """Per-cell (e_F, e_O) evidence, stored as float32 of shape (rows, cols, 2)."""

    spec: GridSpec
    evidence: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.evidence = np.asarray(self.evidence, dtype=np.float32)
        if self.evidence.shape != (self.spec.rows, self.spec.cols, 2):
            raise DimensionError(
                f"evidence shape {self.evidence.shape} does not match grid {self.spec.shape}"
            )
        if not np.all(np.isfinite(self.evidence)) or np.any(self.evidence < 0):
            raise DomainError("evidence must be finite and nonnegative")

    @classmethod
    def zeros(cls, spec: GridSpec) -> "EvidentialGrid":
        return cls(spec, np.zeros((spec.rows, spec.cols, 2), dtype=np.float32))

    def masses(self) -> np.ndarray:
        """(rows, cols, 3) array of m_F, m_O, m_Theta."""
        return evidence_to_mass_array(self.evidence)


@dataclass
class GroundTruthGrid:
    spec: GridSpec
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.shape != self.spec.shape:
            raise DimensionError(
                f"label shape {self.labels.shape} does not match grid {self.spec.shape}"
            )
        if np.any(self.labels > Label.OCCUPIED):
            raise DomainError("unknown label value")

    @classmethod
    def unknown(cls, spec: GridSpec) -> "GroundTruthGrid":
        return cls(spec, np.zeros(spec.shape, dtype=np.uint8))

    def targets(self) -> np.ndarray:
        """One-hot (y_F, y_O) per cell; Unknown cells are (0, 0)."""
        y = np.zeros(self.labels.shape + (2,), dtype=np.float64)
        y[..., 0] = self.labels == Label.FREE
        y[..., 1] = self.labels == Label.OCCUPIED
        return y


# --------------------------------------------------------------- transforms


def world_to_cell(spec: GridSpec, x: float, y: float) -> tuple[int, int] | None:
    """Cell containing (x, y), or None outside the grid (upper edges exclusive)."""
    u, v = spec.to_units(x, y)
    r, c = math.floor(u), math.floor(v)
    if 0 <= r < spec.rows and 0 <= c < spec.cols:
        return r, c
    return None


def world_to_cell_array(spec: GridSpec, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``world_to_cell``: (rows, cols, inside-mask)."""
    u, v = spec.to_units(x, y)
    r = np.floor(u).astype(np.int64)
    c = np.floor(v).astype(np.int64)
    inside = (r >= 0) & (r < spec.rows) & (c >= 0) & (c < spec.cols)
    return r, c, inside


def cell_to_world_center(spec: GridSpec, row: int, col: int) -> tuple[float, float]:
    if not (0 <= row < spec.rows and 0 <= col < spec.cols):
        raise DomainError(f"cell ({row}, {col}) outside {spec.shape} grid")
    return (
        (row + 0.5 - spec.rows / 2) * spec.cell_m,
        (col + 0.5 - spec.cols / 2) * spec.cell_m,
    )


def cell_centers(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """World x, y of every cell centre, each of shape (rows, cols)."""
    xs = (np.arange(spec.rows) + 0.5 - spec.rows / 2) * spec.cell_m
    ys = (np.arange(spec.cols) + 0.5 - spec.cols / 2) * spec.cell_m
    return np.meshgrid(xs, ys, indexing="ij")


# ------------------------------------------------------------ ray traversal


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def supercover_units(u0: float, v0: float, u1: float, v1: float) -> list[tuple[int, int]]:
    """All unit cells whose closed square touches the segment, in travel order.

    Coordinates are grid units. Every float is a dyadic rational, so the
    segment is rescaled onto a common power-of-two denominator and all
    tests run in exact integer arithmetic. This makes corner touches exact
    and the result symmetric under lattice rotations and reflections.
    """
    ratios = [float(t).as_integer_ratio() for t in (u0, v0, u1, v1)]
    den = max(d for _, d in ratios)
    a0, b0, a1, b1 = (n * (den // d) for n, d in ratios)

    if a0 == a1:
        strips = [a0 // den] if a0 % den else [a0 // den - 1, a0 // den]
        lo, hi = min(b0, b1), max(b0, b1)
        js = range(_ceil_div(lo, den) - 1, hi // den + 1)
        if b1 < b0:
            js = reversed(js)
        return [(i, j) for j in js for i in strips]

    du, dv = a1 - a0, b1 - b0
    sgn = 1 if du > 0 else -1
    adu = abs(du)
    umin, umax = min(a0, a1), max(a0, a1)
    strips = range(_ceil_div(umin, den) - 1, umax // den + 1)
    if du < 0:
        strips = reversed(strips)
    step = adu * den
    out: list[tuple[int, int]] = []
    for i in strips:
        s0 = max(i * den, umin)
        s1 = min((i + 1) * den, umax)
        n0 = (b0 * du + (s0 - a0) * dv) * sgn
        n1 = (b0 * du + (s1 - a0) * dv) * sgn
        lo, hi = min(n0, n1), max(n0, n1)
        js = range(_ceil_div(lo, step) - 1, hi // step + 1)
        if dv < 0:
            js = reversed(js)
        out.extend((i, j) for j in js)
    return out


def raytrace_cells(spec: GridSpec, start, end) -> list[tuple[int, int]]:
    """Cells crossed by the segment start -> end, excluding the end cell.

    Supercover semantics: every cell whose closed square the segment
    touches is returned, so a ray through a lattice corner yields both
    corner-adjacent cells. Cells outside the grid are skipped. A
    zero-length ray yields only its start cell.
    """
    u0, v0 = spec.to_units(*start)
    u1, v1 = spec.to_units(*end)
    u0, v0, u1, v1 = float(u0), float(v0), float(u1), float(v1)
    if (u0, v0) == (u1, v1):
        cell = world_to_cell(spec, *start)
        return [cell] if cell is not None else []
    dest = (math.floor(u1), math.floor(v1))
    return [
        (i, j)
        for i, j in supercover_units(u0, v0, u1, v1)
        if (i, j) != dest and 0 <= i < spec.rows and 0 <= j < spec.cols
    ]


# ---------------------------------------------------------------- rendering

_LABEL_COLORS = np.array([[0, 0, 0], [0, 255, 0], [255, 0, 0]], dtype=np.uint8)


def encode_ppm(rgb: np.ndarray) -> bytes:
    """Binary PPM (P6, maxval 255) from an (H, W, 3) uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def to_image(cells: np.ndarray) -> np.ndarray:
    """Reorient a (rows, cols, ...) raster so forward is up and left is left."""
    return cells[::-1, ::-1]


def grid_rgb(grid: EvidentialGrid | GroundTruthGrid) -> np.ndarray:
    if isinstance(grid, GroundTruthGrid):
        return _LABEL_COLORS[grid.labels]
    m = grid.masses()
    rgb = np.zeros(grid.spec.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.floor(255.0 * m[..., 1])
    rgb[..., 1] = np.floor(255.0 * m[..., 0])
    return rgb


def render_ppm(grid: EvidentialGrid | GroundTruthGrid) -> bytes:
    """Green = m(F), red = m(O), black = full ignorance; one pixel per cell."""
    return encode_ppm(to_image(grid_rgb(grid)))


# ---------------------------------------------------------------------- I/O

_MAGIC = b"EVGR"
_VERSION = 1
_KIND_EVIDENCE = 0
_KIND_LABELS = 1
_HEADER = struct.Struct("<4sBBIIf")


def _f32_roundtrip(value: float) -> float:
    # shortest decimal that maps to the stored float32, e.g. 0.16 not 0.1599999964
    return float(str(np.float32(value)))


def grid_to_bytes(grid: EvidentialGrid | GroundTruthGrid) -> bytes:
    spec = grid.spec
    if isinstance(grid, EvidentialGrid):
        kind, payload = _KIND_EVIDENCE, grid.evidence.astype("<f4").tobytes()
    elif isinstance(grid, GroundTruthGrid):
        kind, payload = _KIND_LABELS, grid.labels.astype(np.uint8).tobytes()
    else:
        raise TypeError(f"cannot serialise {type(grid).__name__}")
    return _HEADER.pack(_MAGIC, _VERSION, kind, spec.rows, spec.cols, spec.cell_m) + payload


def grid_from_bytes(data: bytes, expect: GridSpec | None = None):
    if len(data) < _HEADER.size:
        raise TruncatedError("file shorter than the grid header")
    magic, version, kind, rows, cols, cell = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise HeaderError(f"unsupported grid version {version}")
    if kind not in (_KIND_EVIDENCE, _KIND_LABELS):
        raise HeaderError(f"unknown grid kind {kind}")
    payload = data[_HEADER.size:]
    item = 8 if kind == _KIND_EVIDENCE else 1
    if len(payload) % item:
        raise TruncatedError("payload ends inside a cell record")
    if len(payload) // item != rows * cols:
        raise DimensionError(
            f"header declares {rows}x{cols} cells but payload holds {len(payload) // item}"
        )
    try:
        spec = GridSpec(rows, cols, _f32_roundtrip(cell))
    except DomainError as exc:
        raise HeaderError(str(exc)) from None
    if expect is not None and (spec.rows, spec.cols) != (expect.rows, expect.cols):
        raise DimensionError(f"grid is {spec.shape}, expected {expect.shape}")
    if kind == _KIND_EVIDENCE:
        ev = np.frombuffer(payload, dtype="<f4").reshape(rows, cols, 2).astype(np.float32)
        return EvidentialGrid(spec, ev)
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(rows, cols).copy()
    return GroundTruthGrid(spec, labels)


def save_grid(path, grid: EvidentialGrid | GroundTruthGrid) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def load_grid(path, expect: GridSpec | None = None):
    return grid_from_bytes(Path(path).read_bytes(), expect)
