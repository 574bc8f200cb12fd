"""Hand-crafted baseline inverse sensor model.

Returns at obstacle height mark their cell Occupied; every cell on the
straight line from the sensor to an Occupied cell is carved Free.
Nothing else is observed, so ground-only regions stay Unknown.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .evidential import BeliefMass, dirichlet_to_evidence, mass_to_opinion, opinion_to_dirichlet
from .grid import EvidentialGrid, GridSpec, Label, supercover_units, world_to_cell_array
from .pointcloud import PointCloud


@dataclass(frozen=True)
class GeometricIsmParams:
    h_min: float = 0.5
    h_max: float = 2.0
    m_hit: float = 0.9
    m_free: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.h_min < self.h_max:
            raise DomainError("need 0 <= h_min < h_max")
        for name in ("m_hit", "m_free"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def occupied_cells(cloud: PointCloud, spec: GridSpec, params: GeometricIsmParams) -> np.ndarray:
    """Boolean grid of cells holding a return whose height above flat ground is in band."""
    height = cloud.points[:, 2] + cloud.sensor_height
    band = (height >= params.h_min) & (height <= params.h_max)
    r, c, inside = world_to_cell_array(spec, cloud.points[band, 0], cloud.points[band, 1])
    occ = np.zeros(spec.shape, dtype=bool)
    occ[r[inside], c[inside]] = True
    return occ


def carve_free(occupied: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Cells on the segments from the sensor vertex to every Occupied cell centre.

    Traversal runs in exact grid units and excludes the destination cell.
    Occupied cells are never returned as Free.
    """
    free = np.zeros(spec.shape, dtype=bool)
    u0, v0 = spec.rows / 2, spec.cols / 2
    for r, c in zip(*np.nonzero(occupied)):
        for i, j in supercover_units(u0, v0, r + 0.5, c + 0.5):
            if 0 <= i < spec.rows and 0 <= j < spec.cols and (i, j) != (r, c):
                free[i, j] = True
    free &= ~occupied
    return free


def _mark_evidence(m: BeliefMass, u_min: float) -> np.ndarray:
    e = dirichlet_to_evidence(opinion_to_dirichlet(mass_to_opinion(m), u_min=u_min))
    return np.array([e.e_F, e.e_O])


def mark_grid(cloud: PointCloud, spec: GridSpec, params: GeometricIsmParams) -> np.ndarray:
    """Per-cell Label marks before conversion to evidence."""
    occ = occupied_cells(cloud, spec, params)
    marks = np.full(spec.shape, Label.UNKNOWN, dtype=np.uint8)
    marks[carve_free(occ, spec)] = Label.FREE
    marks[occ] = Label.OCCUPIED
    return marks


def geometric_ism(cloud: PointCloud, spec: GridSpec, params: GeometricIsmParams = GeometricIsmParams()) -> EvidentialGrid:
    """Evidential grid for one cloud. Defaults give (18, 0) for Free and (0, 18) for Occupied."""
    marks = mark_grid(cloud, spec, params)
    u_min = 1.0 - params.m_hit
    table = np.zeros((3, 2))
    table[Label.FREE] = _mark_evidence(BeliefMass(params.m_free, 0.0, 1.0 - params.m_free), u_min)
    table[Label.OCCUPIED] = _mark_evidence(BeliefMass(0.0, params.m_hit, 1.0 - params.m_hit), u_min)
    return EvidentialGrid(spec, table[marks].astype(np.float32))
