"""Compare the geometric and the learned inverse sensor models on labelled frames.

Per frame and per model: mean belief masses over all cells and the mean
per-cell KL divergence from a Dirichlet built out of the ground truth.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, EvogridError
from .evidential import evidence_to_mass_array, kl_dirichlet_array
from .geometric_ism import GeometricIsmParams, geometric_ism
from .grid import EvidentialGrid, GridSpec, GroundTruthGrid, Label, encode_ppm, load_grid, render_ppm, to_image, world_to_cell_array
from .model import ModelParams, load_manifest, predict
from .pointcloud import PointCloud, load_cloud

ISM_NAMES = ("geometric", "deep")
SENSITIVITY_EVIDENCE = (10.0, 50.0, 200.0)
FRAME_COLUMNS = ("frame", "ism", "status", "m_free", "m_occupied", "m_unknown", "mean_kl", "mean_kl_observed")
AGGREGATE_COLUMNS = (
    "ism", "n_frames", "n_failed", "m_free", "m_occupied", "m_unknown", "mean_kl", "mean_kl_observed",
    "mean_kl_te10", "mean_kl_te50", "mean_kl_te200",
)


@dataclass(frozen=True)
class TruthDirichletConfig:
    true_evidence: float = 50.0

    def __post_init__(self):
        if not (math.isfinite(self.true_evidence) and self.true_evidence > 0):
            raise DomainError("true_evidence must be positive and finite")

    def as_dict(self) -> dict:
        return asdict(self)


def truth_to_dirichlet(truth: GroundTruthGrid, cfg: TruthDirichletConfig = TruthDirichletConfig()) -> np.ndarray:
    """Alpha array (rows, cols, 2): Free (1+e, 1), Occupied (1, 1+e), Unknown (1, 1)."""
    alpha = np.ones(truth.labels.shape + (2,))
    alpha[truth.labels == Label.FREE, 0] += cfg.true_evidence
    alpha[truth.labels == Label.OCCUPIED, 1] += cfg.true_evidence
    return alpha


def mean_belief_masses(grid: EvidentialGrid) -> tuple[float, float, float]:
    """(mean m(F), mean m(O), mean m(Theta)) over every cell."""
    m = evidence_to_mass_array(grid.evidence).reshape(-1, 3)
    return tuple(math.fsum(m[:, k]) / len(m) for k in range(3))


def kl_to_truth_cells(pred: EvidentialGrid, truth: GroundTruthGrid, cfg: TruthDirichletConfig = TruthDirichletConfig()) -> np.ndarray:
    if pred.spec != truth.spec:
        raise DomainError(f"prediction grid {pred.spec} does not match truth grid {truth.spec}")
    return kl_dirichlet_array(pred.evidence.astype(np.float64) + 1.0, truth_to_dirichlet(truth, cfg))


def mean_kl_to_truth(
    pred: EvidentialGrid,
    truth: GroundTruthGrid,
    cfg: TruthDirichletConfig = TruthDirichletConfig(),
    observed_only: bool = False,
) -> float:
    """Mean over cells of KL(Dir(pred) || Dir(truth)).

    With ``observed_only`` the mean runs over cells whose label is not
    Unknown; a frame without such cells scores 0.
    """
    kl = kl_to_truth_cells(pred, truth, cfg)
    if observed_only:
        kl = kl[truth.labels != Label.UNKNOWN]
        if kl.size == 0:
            return 0.0
    return math.fsum(kl.ravel()) / kl.size


# ---------------------------------------------------------------- rendering


def cloud_rgb(cloud: PointCloud, spec: GridSpec) -> np.ndarray:
    """Bird's-eye scatter: brightness grows with the log of the point count per cell."""
    r, c, inside = world_to_cell_array(spec, cloud.points[:, 0], cloud.points[:, 1])
    counts = np.zeros(spec.shape)
    np.add.at(counts, (r[inside], c[inside]), 1.0)
    top = np.log1p(counts.max()) if counts.any() else 1.0
    level = np.floor(255.0 * np.log1p(counts) / top).astype(np.uint8)
    return np.repeat(level[..., None], 3, axis=-1)


def render_cloud_ppm(cloud: PointCloud, spec: GridSpec) -> bytes:
    return encode_ppm(to_image(cloud_rgb(cloud, spec)))


# ------------------------------------------------------------------ reports


@dataclass
class FrameResult:
    frame: str
    ism: str
    status: str = "ok"
    m_free: float = math.nan
    m_occupied: float = math.nan
    m_unknown: float = math.nan
    mean_kl: float = math.nan
    mean_kl_observed: float = math.nan
    kl_sensitivity: dict = field(default_factory=dict, repr=False)


@dataclass
class EvalReport:
    frames: list
    aggregate: list
    errors: list

    def frames_csv(self) -> str:
        return _csv(FRAME_COLUMNS, [[getattr(f, k) for k in FRAME_COLUMNS] for f in self.frames])

    def aggregate_csv(self) -> str:
        return _csv(AGGREGATE_COLUMNS, [[row[k] for k in AGGREGATE_COLUMNS] for row in self.aggregate])

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.frames_csv())
        (out / "report_aggregate.csv").write_text(self.aggregate_csv())


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def score_frame(name: str, ism: str, pred: EvidentialGrid, truth: GroundTruthGrid, cfg: TruthDirichletConfig) -> FrameResult:
    m_f, m_o, m_u = mean_belief_masses(pred)
    sens = {te: mean_kl_to_truth(pred, truth, TruthDirichletConfig(te)) for te in SENSITIVITY_EVIDENCE}
    return FrameResult(
        name, ism, "ok", m_f, m_o, m_u,
        mean_kl_to_truth(pred, truth, cfg),
        mean_kl_to_truth(pred, truth, cfg, observed_only=True),
        sens,
    )


def aggregate(frames: list) -> list[dict]:
    """One row per model seen; means over its successfully scored frames."""
    rows = []
    for ism in ISM_NAMES:
        mine = [f for f in frames if f.ism == ism]
        if not mine:
            continue
        ok = [f for f in mine if f.status == "ok"]

        def mean(values):
            values = list(values)
            return math.fsum(values) / len(values) if values else math.nan

        row = {"ism": ism, "n_frames": len(ok), "n_failed": len(mine) - len(ok)}
        for key in ("m_free", "m_occupied", "m_unknown", "mean_kl", "mean_kl_observed"):
            row[key] = mean(getattr(f, key) for f in ok)
        for te in SENSITIVITY_EVIDENCE:
            row[f"mean_kl_te{int(te)}"] = mean(f.kl_sensitivity[te] for f in ok)
        rows.append(row)
    return rows


def _evaluate_frame(entry, root: Path, params, geom_params, cfg, out_dir):
    name = Path(str(entry.get("cloud", entry.get("index", "?")))).stem if isinstance(entry, dict) else "?"
    try:
        cloud = load_cloud(root / entry["cloud"])
        truth = load_grid(root / entry["labels"])
        if not isinstance(truth, GroundTruthGrid):
            raise DomainError(f"{entry['labels']}: expected a label grid")
    except (OSError, EvogridError, KeyError, TypeError) as exc:
        msg = f"{exc.filename}: {exc.strerror}" if isinstance(exc, OSError) and exc.filename else str(exc)
        return [FrameResult(name, ism, f"error: {msg}") for ism in ISM_NAMES], f"frame {name}: {msg}"
    spec = truth.spec
    geom = geometric_ism(cloud, spec, geom_params)
    deep = predict(params, cloud, spec)
    if out_dir is not None:
        out = Path(out_dir)
        (out / f"frame_{name}_input.ppm").write_bytes(render_cloud_ppm(cloud, spec))
        (out / f"frame_{name}_geom.ppm").write_bytes(render_ppm(geom))
        (out / f"frame_{name}_deep.ppm").write_bytes(render_ppm(deep))
        (out / f"frame_{name}_truth.ppm").write_bytes(render_ppm(truth))
    return [score_frame(name, "geometric", geom, truth, cfg), score_frame(name, "deep", deep, truth, cfg)], None


def evaluate_run(
    manifest,
    params: ModelParams,
    geom_params: GeometricIsmParams = GeometricIsmParams(),
    cfg: TruthDirichletConfig = TruthDirichletConfig(),
    out_dir=None,
    workers: int = 1,
) -> EvalReport:
    """Score both models on every frame listed in a dataset manifest.

    A frame whose files cannot be read produces rows with an error status
    and an entry in ``errors``; the remaining frames are still scored. With
    ``out_dir`` the reports and the per-frame images are written there.
    Rows are ordered by frame name so the report does not depend on the
    manifest order.
    """
    doc, root = load_manifest(manifest)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    entries = doc["samples"]
    job = lambda e: _evaluate_frame(e, root, params, geom_params, cfg, out_dir)  # noqa: E731
    if workers > 1 and len(entries) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, entries))
    else:
        results = [job(e) for e in entries]
    frames = sorted((f for rows, _ in results for f in rows), key=lambda f: (f.frame, ISM_NAMES.index(f.ism)))
    errors = sorted(err for _, err in results if err)
    report = EvalReport(frames, aggregate(frames), errors)
    if out_dir is not None:
        report.write(out_dir)
    return report
