"""Procedural street scenes, ray-cast lidar simulation and HD ground truth.

World frame: x forward, y left, z up, ground through the origin. The
simulated sensor sits at (0, 0, mount_height); returned clouds are in
the sensor frame, so flat ground appears at z = -mount_height.
"""
from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, GenerationError
from .grid import GridSpec, GroundTruthGrid, Label, cell_centers, save_grid, world_to_cell_array
from .pointcloud import PointCloud, save_cloud


class Material(enum.IntEnum):
    GROUND = 0
    VEHICLE = 1
    PEDESTRIAN = 2
    VEGETATION = 3
    BUILDING = 4


# base reflectivity per material; intensity = base / range**2
REFLECTIVITY = {
    Material.GROUND: 0.25,
    Material.VEHICLE: 0.9,
    Material.PEDESTRIAN: 0.45,
    Material.VEGETATION: 0.35,
    Material.BUILDING: 0.6,
}
_REFLECTIVITY_TABLE = np.array([REFLECTIVITY[m] for m in Material])

BOX = "box"
CYLINDER = "cylinder"


# ------------------------------------------------------------------ scene


@dataclass(frozen=True)
class Obstacle:
    """A box (length along the yaw heading, width across) or a vertical cylinder."""

    shape: str
    x: float
    y: float
    yaw: float
    length: float
    width: float
    height: float
    material: Material
    object_id: int
    base_z: float = 0.0

    def __post_init__(self):
        if self.shape not in (BOX, CYLINDER):
            raise DomainError(f"unknown obstacle shape {self.shape!r}")
        if min(self.length, self.width, self.height) <= 0:
            raise DomainError("obstacle dimensions must be positive")
        if self.shape == CYLINDER and self.length != self.width:
            raise DomainError("cylinders need length == width (the diameter)")

    @property
    def radius(self) -> float:
        return 0.5 * self.length

    @property
    def top_z(self) -> float:
        return self.base_z + self.height

    def corners(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise. Cylinders use their bounding square."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def to_local(self, x, y):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = np.asarray(x) - self.x, np.asarray(y) - self.y
        return c * dx + s * dy, -s * dx + c * dy

    def contains_xy(self, x, y) -> np.ndarray:
        """Closed footprint membership for arrays of ground points."""
        lx, ly = self.to_local(x, y)
        if self.shape == CYLINDER:
            return lx * lx + ly * ly <= self.radius**2
        return (np.abs(lx) <= 0.5 * self.length) & (np.abs(ly) <= 0.5 * self.width)

    def distance_xy(self, x: float, y: float) -> float:
        lx, ly = self.to_local(x, y)
        if self.shape == CYLINDER:
            return max(0.0, math.hypot(lx, ly) - self.radius)
        ex = max(abs(float(lx)) - 0.5 * self.length, 0.0)
        ey = max(abs(float(ly)) - 0.5 * self.width, 0.0)
        return math.hypot(ex, ey)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["material"] = Material(self.material).name.lower()
        return d


def footprints_overlap(a: Obstacle, b: Obstacle, margin: float = 0.0) -> bool:
    """True when the footprints come closer than ``margin``."""
    if a.shape == CYLINDER and b.shape == CYLINDER:
        return math.hypot(a.x - b.x, a.y - b.y) < a.radius + b.radius + margin
    if a.shape == CYLINDER:
        a, b = b, a
    if b.shape == CYLINDER:
        return a.distance_xy(b.x, b.y) < b.radius + margin
    # separating axes of two rectangles
    ca, cb = a.corners(), b.corners()
    for yaw in (a.yaw, b.yaw):
        for axis in ((math.cos(yaw), math.sin(yaw)), (-math.sin(yaw), math.cos(yaw))):
            pa, pb = ca @ axis, cb @ axis
            if pa.min() - pb.max() >= margin or pb.min() - pa.max() >= margin:
                return False
    return True


@dataclass(frozen=True)
class Scene:
    """Ground plane z = gx * x + gy * y plus static obstacles."""

    obstacles: tuple = ()
    ground_gradient: tuple = (0.0, 0.0)
    extent: tuple = (80.0, 56.0)

    def __post_init__(self):
        ids = [o.object_id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise DomainError("object ids must be unique")
        if any(i < 0 for i in ids):
            raise DomainError("object ids must be nonnegative")
        for o in self.obstacles:
            if o.contains_xy(0.0, 0.0):
                raise DomainError(f"obstacle {o.object_id} contains the sensor origin")
        if math.degrees(math.atan(math.hypot(*self.ground_gradient))) > 2.0 + 1e-9:
            raise DomainError("ground slope above 2 degrees")

    def ground_z(self, x, y):
        gx, gy = self.ground_gradient
        return gx * np.asarray(x) + gy * np.asarray(y)

    def obstacle(self, object_id: int) -> Obstacle:
        for o in self.obstacles:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def as_dict(self) -> dict:
        return {
            "extent": list(self.extent),
            "ground_gradient": list(self.ground_gradient),
            "obstacles": [o.as_dict() for o in self.obstacles],
        }


@dataclass(frozen=True)
class SceneParams:
    n_vehicles: int = 8
    n_pedestrians: int = 6
    n_static: int = 6
    extent: tuple = (80.0, 56.0)
    road_half_width: float = 7.0
    max_slope_deg: float = 1.0
    clearance: float = 0.3
    max_tries: int = 500

    def __post_init__(self):
        if min(self.n_vehicles, self.n_pedestrians, self.n_static) < 0:
            raise DomainError("object counts must be nonnegative")
        if len(self.extent) != 2 or min(self.extent) <= 0:
            raise DomainError("extent must be two positive lengths")
        if not 0.0 <= self.max_slope_deg <= 2.0:
            raise DomainError("max_slope_deg must lie in [0, 2]")
        if self.max_tries < 1:
            raise DomainError("max_tries must be positive")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["extent"] = list(self.extent)
        return d


# region the ego vehicle occupies; nothing may be placed there
_EGO = Obstacle(BOX, 0.0, 0.0, 0.0, 6.0, 3.0, 2.0, Material.VEHICLE, -1)


def _vehicle_dims(rng) -> tuple[float, float, float]:
    kind = rng.random()
    if kind < 0.7:  # car
        return rng.uniform(3.5, 5.2), rng.uniform(1.6, 2.0), rng.uniform(1.4, 1.8)
    if kind < 0.85:  # van
        return rng.uniform(5.0, 6.5), rng.uniform(1.9, 2.2), rng.uniform(2.0, 2.6)
    return rng.uniform(7.0, 12.0), rng.uniform(2.3, 2.6), rng.uniform(2.8, 3.8)


def generate_scene(rng_seed: int, params: SceneParams = SceneParams()) -> Scene:
    """Random street: vehicles on the road, pedestrians mostly on the sidewalks,
    buildings and trees at the roadside. Deterministic per seed."""
    rng = np.random.Generator(np.random.Philox(rng_seed))
    half_l, half_w = 0.5 * params.extent[0], 0.5 * params.extent[1]
    road = min(params.road_half_width, half_w)

    slope = math.tan(math.radians(rng.uniform(0.0, params.max_slope_deg)))
    heading = rng.uniform(0.0, 2.0 * math.pi)
    gradient = (slope * math.cos(heading), slope * math.sin(heading))

    placed: list[Obstacle] = []

    def fits(o: Obstacle) -> bool:
        corners = o.corners()
        if np.any(np.abs(corners[:, 0]) > half_l) or np.any(np.abs(corners[:, 1]) > half_w):
            return False
        if footprints_overlap(o, _EGO, params.clearance):
            return False
        return not any(footprints_overlap(o, p, params.clearance) for p in placed)

    def place(make, what: str) -> None:
        for _ in range(params.max_tries):
            o = make(len(placed))
            if fits(o):
                placed.append(o)
                return
        raise GenerationError(f"could not place {what} #{len(placed)} after {params.max_tries} tries")

    def grounded(shape, x, y, yaw, length, width, height, material, oid) -> Obstacle:
        # sink the base to the lowest ground point under the footprint
        probe = Obstacle(shape, x, y, yaw, length, width, height, material, oid)
        base = float(np.min(gradient[0] * probe.corners()[:, 0] + gradient[1] * probe.corners()[:, 1]))
        return Obstacle(shape, x, y, yaw, length, width, height, material, oid, base)

    def vehicle(oid):
        length, width, height = _vehicle_dims(rng)
        yaw = (0.0 if rng.random() < 0.5 else math.pi) + rng.uniform(-0.08, 0.08)
        x = rng.uniform(-half_l, half_l)
        y = rng.uniform(-road + 0.5 * width, road - 0.5 * width) if road > width else rng.uniform(-half_w, half_w)
        return grounded(BOX, x, y, yaw, length, width, height, Material.VEHICLE, oid)

    def pedestrian(oid):
        x = rng.uniform(-half_l, half_l)
        if rng.random() < 0.7 and half_w > road:
            y = math.copysign(rng.uniform(road, min(road + 4.0, half_w)), rng.random() - 0.5)
        else:
            y = rng.uniform(-half_w, half_w)
        return grounded(CYLINDER, x, y, 0.0, 0.6, 0.6, rng.uniform(1.6, 1.9), Material.PEDESTRIAN, oid)

    def static(oid):
        x = rng.uniform(-half_l, half_l)
        side = math.copysign(1.0, rng.random() - 0.5)
        if rng.random() < 0.5:
            length, width = rng.uniform(6.0, 20.0), rng.uniform(5.0, 12.0)
            lo = min(road + 5.0, half_w)
            y = side * rng.uniform(lo, max(lo, half_w))
            yaw = rng.uniform(-0.1, 0.1)
            return grounded(BOX, x, y, yaw, length, width, rng.uniform(4.0, 12.0), Material.BUILDING, oid)
        d = 2.0 * rng.uniform(0.3, 0.8)
        y = side * rng.uniform(min(road + 0.5, half_w), min(road + 5.0, half_w))
        return grounded(CYLINDER, x, y, 0.0, d, d, rng.uniform(2.0, 6.0), Material.VEGETATION, oid)

    for _ in range(params.n_static):
        place(static, "static object")
    for _ in range(params.n_vehicles):
        place(vehicle, "vehicle")
    for _ in range(params.n_pedestrians):
        place(pedestrian, "pedestrian")
    return Scene(tuple(placed), gradient, tuple(params.extent))


# ------------------------------------------------------------------ lidar


@dataclass(frozen=True)
class LidarConfig:
    """Spinning lidar with evenly spaced channels and azimuth steps."""

    channels: int = 32
    vertical_fov: tuple = (-25.0, 15.0)
    azimuth_step: float = 0.2
    max_range: float = 120.0
    mount_height: float = 1.9
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.channels < 1:
            raise DomainError("channels must be >= 1")
        if not self.azimuth_step > 0:
            raise DomainError("azimuth_step must be positive")
        if not self.max_range > 0:
            raise DomainError("max_range must be positive")
        if not self.mount_height > 0:
            raise DomainError("mount_height must be positive")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be nonnegative")
        lo, hi = self.vertical_fov
        if not (-90.0 < lo <= hi < 90.0):
            raise DomainError("vertical_fov must satisfy -90 < min <= max < 90")

    def elevations(self) -> np.ndarray:
        lo, hi = self.vertical_fov
        return np.linspace(lo, hi, self.channels)

    def azimuths(self) -> np.ndarray:
        return np.arange(0.0, 360.0, self.azimuth_step)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["vertical_fov"] = list(self.vertical_fov)
        return d


SPARSE_LIDAR = LidarConfig()
HD_LIDAR = LidarConfig(channels=256, noise_sigma=0.01)


def ray_directions(config: LidarConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit directions (channels, azimuths) for every ray.

    Trigonometry runs through ``math`` per angle so a direction depends
    only on its own angles, not on the array it sits in.
    """
    el = [math.radians(e) for e in config.elevations()]
    az = [math.radians(a) for a in config.azimuths()]
    ce = np.array([math.cos(e) for e in el])[:, None]
    se = np.array([math.sin(e) for e in el])[:, None]
    ca = np.array([math.cos(a) for a in az])[None, :]
    sa = np.array([math.sin(a) for a in az])[None, :]
    dz = np.broadcast_to(se, (len(el), len(az)))
    return ce * ca, ce * sa, np.ascontiguousarray(dz)


def _slab(p, d, lo, hi):
    """Parametric interval where p + t d lies in [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - p) / d
        t2 = (hi - p) / d
    parallel = d == 0
    inside = (p >= lo) & (p <= hi)
    t_lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return t_lo, t_hi


def intersect_obstacle(o: Obstacle, height: float, dx, dy, dz) -> np.ndarray:
    """Distance along unit rays from (0, 0, height) to the first hit; inf on a miss."""
    c, s = math.cos(o.yaw), math.sin(o.yaw)
    if o.shape == BOX:
        px, py = c * -o.x + s * -o.y, -s * -o.x + c * -o.y
        ldx, ldy = c * dx + s * dy, -s * dx + c * dy
        ax = _slab(px, ldx, -0.5 * o.length, 0.5 * o.length)
        ay = _slab(py, ldy, -0.5 * o.width, 0.5 * o.width)
        az = _slab(height, dz, o.base_z, o.top_z)
        t_in = np.maximum(np.maximum(ax[0], ay[0]), az[0])
        t_out = np.minimum(np.minimum(ax[1], ay[1]), az[1])
        return np.where((t_in <= t_out) & (t_in > 0), t_in, np.inf)

    px, py = -o.x, -o.y
    r2 = o.radius**2
    a = dx * dx + dy * dy
    b = 2.0 * (px * dx + py * dy)
    cc = px * px + py * py - r2
    disc = b * b - 4.0 * a * cc
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(disc)) / (2.0 * a)
    z_side = height + t_side * dz
    side_ok = (a > 0) & (disc >= 0) & (t_side > 0) & (z_side >= o.base_z) & (z_side <= o.top_z)
    t = np.where(side_ok, t_side, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_top = (o.top_z - height) / dz
    hx, hy = px + t_top * dx, py + t_top * dy
    top_ok = (dz < 0) & (t_top > 0) & (hx * hx + hy * hy <= r2)
    return np.where(top_ok & (t_top < t), t_top, t)


def _azimuth_window(o: Obstacle, azimuths_deg: np.ndarray) -> np.ndarray:
    """Indices of azimuth columns that can see the obstacle's footprint."""
    centre = math.atan2(o.y, o.x)
    if o.shape == CYLINDER:
        dist = math.hypot(o.x, o.y)
        half = math.asin(min(1.0, o.radius / dist)) if dist > 0 else math.pi
    else:
        corners = o.corners()
        rel = np.arctan2(corners[:, 1], corners[:, 0]) - centre
        rel = (rel + math.pi) % (2 * math.pi) - math.pi
        half = float(np.max(np.abs(rel)))
    half += math.radians(0.5)
    if half >= math.pi:
        return np.arange(len(azimuths_deg))
    rel = (np.radians(azimuths_deg) - centre + math.pi) % (2 * math.pi) - math.pi
    return np.flatnonzero(np.abs(rel) <= half)


@dataclass
class RayHits:
    """Noise-free first hits for the full (channel, azimuth) ray lattice."""

    dx: np.ndarray = field(repr=False)
    dy: np.ndarray = field(repr=False)
    dz: np.ndarray = field(repr=False)
    distance: np.ndarray = field(repr=False)  # inf where nothing is hit
    material: np.ndarray = field(repr=False)
    object_id: np.ndarray = field(repr=False)


def cast_rays(scene: Scene, config: LidarConfig) -> RayHits:
    """Nearest intersection among ground and obstacles for every ray."""
    dx, dy, dz = ray_directions(config)
    h = config.mount_height
    gx, gy = scene.ground_gradient
    denom = gx * dx + gy * dy - dz
    with np.errstate(divide="ignore"):
        t_best = np.where(denom > 0, h / denom, np.inf)
    material = np.full(t_best.shape, int(Material.GROUND), dtype=np.int8)
    object_id = np.full(t_best.shape, -1, dtype=np.int32)

    azimuths = config.azimuths()
    for o in scene.obstacles:
        cols = _azimuth_window(o, azimuths)
        if len(cols) == 0:
            continue
        t = intersect_obstacle(o, h, dx[:, cols], dy[:, cols], dz[:, cols])
        sub_best = t_best[:, cols]
        closer = t < sub_best
        t_best[:, cols] = np.where(closer, t, sub_best)
        material[:, cols] = np.where(closer, int(o.material), material[:, cols])
        object_id[:, cols] = np.where(closer, o.object_id, object_id[:, cols])
    material[~np.isfinite(t_best)] = -1
    return RayHits(dx, dy, dz, t_best, material, object_id)


def raycast(scene: Scene, config: LidarConfig, rng_seed: int = 0) -> PointCloud:
    """Simulate one sweep. Returns a labeled cloud in the sensor frame,
    ordered channel by channel, then by azimuth."""
    rays = cast_rays(scene, config)
    hit = rays.distance <= config.max_range
    t = rays.distance[hit]
    if config.noise_sigma > 0 and len(t):
        rng = np.random.Generator(np.random.Philox(rng_seed))
        t = np.maximum(t + config.noise_sigma * rng.standard_normal(len(t)), 1e-3)
    mat = rays.material[hit]
    pts = np.empty((len(t), 4))
    pts[:, 0] = t * rays.dx[hit]
    pts[:, 1] = t * rays.dy[hit]
    pts[:, 2] = t * rays.dz[hit]
    pts[:, 3] = _REFLECTIVITY_TABLE[mat] / (t * t)
    return PointCloud(pts, config.mount_height, mat, rays.object_id[hit])


# ------------------------------------------------------------ ground truth


def object_hit_counts(cloud: PointCloud) -> dict[int, int]:
    if not cloud.labeled:
        raise DomainError("cloud carries no object labels")
    ids, counts = np.unique(cloud.object_id[cloud.object_id >= 0], return_counts=True)
    return {int(i): int(n) for i, n in zip(ids, counts)}


def ground_truth_from_hd(
    scene: Scene,
    hd_cloud: PointCloud,
    sparse_cloud: PointCloud,
    spec: GridSpec,
    min_hits: int = 50,
) -> GroundTruthGrid:
    """Label grid from a dense reference sweep.

    Cells holding any non-ground HD return are Occupied, cells holding only
    ground returns are Free, the rest Unknown. Objects that the sparse
    sensor hits at least ``min_hits`` times then get their whole footprint
    marked Occupied.
    """
    if not hd_cloud.labeled or not sparse_cloud.labeled:
        raise DomainError("ground truth needs material-labeled clouds")
    if scene.extent[0] > spec.length_m + 1e-9 or scene.extent[1] > spec.width_m + 1e-9:
        raise DomainError(
            f"scene extent {tuple(scene.extent)} exceeds grid extent ({spec.length_m}, {spec.width_m})"
        )
    if min_hits < 0:
        raise DomainError("min_hits must be nonnegative")

    r, c, inside = world_to_cell_array(spec, hd_cloud.points[:, 0], hd_cloud.points[:, 1])
    ground = hd_cloud.material == Material.GROUND
    seen_ground = np.zeros(spec.shape, dtype=bool)
    seen_object = np.zeros(spec.shape, dtype=bool)
    seen_ground[r[inside & ground], c[inside & ground]] = True
    seen_object[r[inside & ~ground], c[inside & ~ground]] = True

    labels = np.full(spec.shape, Label.UNKNOWN, dtype=np.uint8)
    labels[seen_ground] = Label.FREE
    labels[seen_object] = Label.OCCUPIED

    counts = object_hit_counts(sparse_cloud)
    xs, ys = cell_centers(spec)
    for o in scene.obstacles:
        if counts.get(o.object_id, 0) >= min_hits:
            labels[o.contains_xy(xs, ys)] = Label.OCCUPIED
    return GroundTruthGrid(spec, labels)


# ----------------------------------------------------------------- dataset


@dataclass
class Sample:
    scene: Scene
    sparse: PointCloud = field(repr=False)
    labels: GroundTruthGrid = field(repr=False)


def sample_seeds(seed: int, index: int) -> tuple[int, int, int]:
    """Independent scene, sparse-sensor and HD-sensor seeds for one sample."""
    state = np.random.SeedSequence([seed, index]).generate_state(3, dtype=np.uint64)
    return tuple(int(s) for s in state)


def generate_sample(
    seed: int,
    index: int,
    scene_params: SceneParams,
    sparse_config: LidarConfig,
    hd_config: LidarConfig,
    spec: GridSpec,
    min_hits: int = 50,
) -> Sample:
    if sparse_config.mount_height != hd_config.mount_height:
        raise DomainError("sparse and HD sensors must share the mount point")
    s_scene, s_sparse, s_hd = sample_seeds(seed, index)
    scene = generate_scene(s_scene, scene_params)
    sparse = raycast(scene, sparse_config, s_sparse)
    hd = raycast(scene, hd_config, s_hd)
    return Sample(scene, sparse, ground_truth_from_hd(scene, hd, sparse, spec, min_hits))


MANIFEST_NAME = "manifest.json"


def generate_dataset(
    out_dir,
    n_samples: int,
    seed: int,
    scene_params: SceneParams = SceneParams(),
    sparse_config: LidarConfig = SPARSE_LIDAR,
    hd_config: LidarConfig = HD_LIDAR,
    spec: GridSpec | None = None,
    min_hits: int = 50,
    workers: int = 1,
) -> dict:
    """Write ``NNNNN.evpc`` / ``NNNNN.evgrid`` pairs and ``manifest.json``.

    Sample i depends only on (seed, i), so the output is independent of
    ``workers``.
    """
    from .grid import DESK_SPEC

    spec = spec or DESK_SPEC
    if n_samples < 0:
        raise DomainError("n_samples must be nonnegative")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: cannot create dataset directory: {exc.strerror}") from exc

    def one(i: int) -> dict:
        sample = generate_sample(seed, i, scene_params, sparse_config, hd_config, spec, min_hits)
        cloud_name, label_name = f"{i:05d}.evpc", f"{i:05d}.evgrid"
        for name, writer, obj in ((cloud_name, save_cloud, sample.sparse), (label_name, save_grid, sample.labels)):
            try:
                writer(out / name, obj)
            except OSError as exc:
                raise OSError(f"{out / name}: {exc.strerror}") from exc
        return {
            "index": i,
            "cloud": cloud_name,
            "labels": label_name,
            "n_points": len(sample.sparse),
            "n_objects": len(sample.scene.obstacles),
        }

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(one, range(n_samples)))
    else:
        entries = [one(i) for i in range(n_samples)]

    manifest = {
        "format": "evogrid-dataset",
        "version": 1,
        "seed": seed,
        "n_samples": n_samples,
        "min_hits": min_hits,
        "grid": spec.as_dict(),
        "scene_params": scene_params.as_dict(),
        "sparse_lidar": sparse_config.as_dict(),
        "hd_lidar": hd_config.as_dict(),
        "samples": entries,
    }
    path = out / MANIFEST_NAME
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    return manifest
