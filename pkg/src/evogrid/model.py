"""A small deep inverse sensor model in plain numpy.

Pipeline: per-point linear + ReLU, max over the points of each pillar,
scatter to a (rows, cols, D) canvas, stride-1 3x3 convolutions with ReLU,
and a 1x1 head with two ReLU channels that are read as (e_F, e_O).
Feature maps are channels-last. Backpropagation is written out by hand
and training uses Adam.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, DomainError, FormatError, HeaderError, TrainingError, TruncatedError
from .grid import DESK_SPEC, EvidentialGrid, GridSpec, GroundTruthGrid, load_grid
from .loss import LossConfig, LossValue, annealing_weight, evidence_loss
from .pointcloud import FEATURE_DIM, PillarSet, PointCloud, load_cloud, normalize_intensity, pillarize, rotate_label_grid, rotate_z

_DTYPES = {"float32": np.float32, "float64": np.float64}

# Fixed per-feature multipliers applied before the encoder. They bring the
# absolute x, y (tens of metres) and the sub-cell offsets (tenths of a metre)
# to comparable magnitudes; the encoder stays a plain linear map.
DEFAULT_FEATURE_SCALE = (0.05, 0.05, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 2.0)


@dataclass(frozen=True)
class ModelConfig:
    pillar_feature_dim: int = 16
    conv_channels: tuple = (16, 16)
    grid: GridSpec = DESK_SPEC
    max_pillars: int = 3000
    max_points: int = 64
    seed: int = 0
    dtype: str = "float32"
    feature_scale: tuple = DEFAULT_FEATURE_SCALE

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "feature_scale", tuple(float(v) for v in self.feature_scale))
        if len(self.feature_scale) != FEATURE_DIM or not all(math.isfinite(v) and v > 0 for v in self.feature_scale):
            raise ConfigError(f"feature_scale needs {FEATURE_DIM} positive finite values")
        if self.pillar_feature_dim < 1 or any(c < 1 for c in self.conv_channels):
            raise ConfigError("layer widths must be positive")
        if self.max_pillars < 1 or self.max_points < 1:
            raise ConfigError("pillar limits must be positive")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter names and shapes in declaration order."""
        d = self.pillar_feature_dim
        out = [("encoder.weight", (FEATURE_DIM, d)), ("encoder.bias", (d,))]
        c_in = d
        for i, c_out in enumerate(self.conv_channels):
            out += [(f"conv{i}.weight", (c_in, 3, 3, c_out)), (f"conv{i}.bias", (c_out,))]
            c_in = c_out
        out += [("head.weight", (c_in, 2)), ("head.bias", (2,))]
        return out

    def as_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["feature_scale"] = list(self.feature_scale)
        d["grid"] = self.grid.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "grid" in d and isinstance(d["grid"], dict):
            d["grid"] = GridSpec(**d["grid"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"model config: {exc}") from exc


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(repr=False)

    def __post_init__(self):
        self.audit()

    def audit(self) -> None:
        expected = self.config.shapes()
        if list(self.tensors) != [name for name, _ in expected]:
            raise ConfigError("parameter names or order differ from the configuration")
        for name, shape in expected:
            t = self.tensors[name]
            if t.shape != shape:
                raise ConfigError(f"{name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise DomainError(f"{name} holds non-finite values")

    @property
    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: str) -> "ModelParams":
        cfg = replace(self.config, dtype=dtype)
        return ModelParams(cfg, {k: v.astype(_DTYPES[dtype]) for k, v in self.tensors.items()})


def init_params(cfg: ModelConfig) -> ModelParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    tensors = {}
    for name, shape in cfg.shapes():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = math.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(cfg.np_dtype)
    return ModelParams(cfg, tensors)


def zero_params(cfg: ModelConfig) -> ModelParams:
    return ModelParams(cfg, {name: np.zeros(shape, dtype=cfg.np_dtype) for name, shape in cfg.shapes()})


# ----------------------------------------------------------------- layers


def _im2col(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H * W, C * 9) patches of the zero-padded map."""
    h, w, c = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (H, W, C, 3, 3)
    return win.reshape(h * w, c * 9)


def _col2im(cols: np.ndarray, h: int, w: int, c: int) -> np.ndarray:
    """Adjoint of ``_im2col``."""
    win = cols.reshape(h, w, c, 3, 3)
    padded = np.zeros((h + 2, w + 2, c), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            padded[ky : ky + h, kx : kx + w] += win[:, :, :, ky, kx]
    return padded[1:-1, 1:-1]


def _conv_weight_matrix(weight: np.ndarray) -> np.ndarray:
    # (C_in, 3, 3, C_out) matches the (C, ky, kx) patch order of _im2col
    return weight.reshape(-1, weight.shape[-1])


def _check_pillars(params: ModelParams, pillars: PillarSet) -> None:
    cfg = params.config
    if pillars.spec != cfg.grid:
        raise ConfigError(f"pillar grid {pillars.spec} does not match model grid {cfg.grid}")
    if pillars.features.shape[-1] != FEATURE_DIM:
        raise ConfigError(f"pillar features have {pillars.features.shape[-1]} channels, expected {FEATURE_DIM}")


def forward_pass(params: ModelParams, pillars: PillarSet):
    """Evidence array (rows, cols, 2) plus the cache needed by ``backward``."""
    _check_pillars(params, pillars)
    cfg, t = params.config, params.tensors
    dt = cfg.np_dtype
    rows, cols = cfg.grid.shape
    feats = pillars.features.astype(dt) * np.asarray(cfg.feature_scale, dtype=dt)
    mask = pillars.point_mask

    pre = feats @ t["encoder.weight"] + t["encoder.bias"]  # (P, M, D)
    act = np.maximum(pre, 0) * mask[..., None]
    arg = np.argmax(act, axis=1)  # first index on ties
    pooled = np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0, :]

    valid = pillars.cell_index[:, 0] >= 0
    r, c = pillars.cell_index[valid, 0], pillars.cell_index[valid, 1]
    canvas = np.zeros((rows, cols, cfg.pillar_feature_dim), dtype=dt)
    canvas[r, c] = pooled[valid]

    x = canvas
    layers = []
    for i in range(len(cfg.conv_channels)):
        w, b = t[f"conv{i}.weight"], t[f"conv{i}.bias"]
        col = _im2col(x)
        z = (col @ _conv_weight_matrix(w) + b).reshape(rows, cols, -1)
        layers.append((col, z))
        x = np.maximum(z, 0)
    z_head = x @ t["head.weight"] + t["head.bias"]
    evidence = np.maximum(z_head, 0)
    cache = dict(feats=feats, mask=mask, pre=pre, arg=arg, valid=valid, r=r, c=c, layers=layers, last=x, z_head=z_head)
    return evidence, cache


def forward(params: ModelParams, pillars: PillarSet) -> EvidentialGrid:
    evidence, _ = forward_pass(params, pillars)
    return EvidentialGrid(params.config.grid, evidence.astype(np.float32))


def backward_from_evidence(params: ModelParams, cache: dict, d_evidence: np.ndarray) -> dict:
    """Parameter gradients given d loss / d evidence."""
    cfg, t = params.config, params.tensors
    dt = cfg.np_dtype
    rows, cols = cfg.grid.shape
    grads = {}

    dz = d_evidence.astype(dt) * (cache["z_head"] > 0)
    x = cache["last"]
    grads["head.weight"] = x.reshape(-1, x.shape[-1]).T @ dz.reshape(-1, 2)
    grads["head.bias"] = dz.sum(axis=(0, 1))
    dx = dz @ t["head.weight"].T

    for i in reversed(range(len(cfg.conv_channels))):
        col, z = cache["layers"][i]
        w = t[f"conv{i}.weight"]
        dz = (dx * (z > 0)).reshape(rows * cols, -1)
        grads[f"conv{i}.weight"] = (col.T @ dz).reshape(w.shape)
        grads[f"conv{i}.bias"] = dz.sum(axis=0)
        dx = _col2im(dz @ _conv_weight_matrix(w).T, rows, cols, w.shape[0])

    # canvas -> pillars -> argmax points
    p, m, d = cache["pre"].shape
    d_pooled = np.zeros((p, d), dtype=dt)
    d_pooled[cache["valid"]] = dx[cache["r"], cache["c"]]
    d_act = np.zeros((p, m, d), dtype=dt)
    np.put_along_axis(d_act, cache["arg"][:, None, :], d_pooled[:, None, :], axis=1)
    d_pre = d_act * ((cache["pre"] > 0) & cache["mask"][..., None])
    flat = d_pre.reshape(-1, d)
    grads["encoder.weight"] = cache["feats"].reshape(-1, FEATURE_DIM).T @ flat
    grads["encoder.bias"] = flat.sum(axis=0)
    return {name: grads[name] for name, _ in cfg.shapes()}


def backward(
    params: ModelParams,
    pillars: PillarSet,
    truth: GroundTruthGrid,
    epoch: int,
    cfg: LossConfig = LossConfig(),
) -> tuple[dict, LossValue]:
    """Exact gradients of the per-sample total loss with respect to every parameter."""
    if truth.spec != params.config.grid:
        raise ConfigError(f"label grid {truth.spec} does not match model grid {params.config.grid}")
    evidence, cache = forward_pass(params, pillars)
    value, d_ev = evidence_loss(evidence, truth.labels, epoch, cfg, with_gradient=True)
    return backward_from_evidence(params, cache, d_ev), value


# -------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict, repr=False)
    v: dict = field(default_factory=dict, repr=False)

    def update(self, params: ModelParams, grads: dict) -> None:
        """One in-place Adam step with bias correction."""
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for name, g in grads.items():
            p = params.tensors[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


# ---------------------------------------------------------------- dataset


@dataclass
class DatasetItem:
    name: str
    cloud: PointCloud = field(repr=False)
    labels: GroundTruthGrid = field(repr=False)


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg})") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("samples"), list):
        raise ConfigError(f"{path}: manifest needs a 'samples' list")
    return manifest, path.parent


def _load_with_path(loader, path):
    try:
        return loader(path)
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from None
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def load_dataset(manifest_path, spec: GridSpec | None = None) -> list[DatasetItem]:
    """Clouds (intensity-normalised) and label grids listed by a manifest."""
    manifest, root = load_manifest(manifest_path)
    items = []
    for entry in manifest["samples"]:
        try:
            cloud_path, label_path = root / entry["cloud"], root / entry["labels"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"manifest sample entry lacks {exc}") from exc
        cloud = normalize_intensity(_load_with_path(load_cloud, cloud_path))
        labels = _load_with_path(load_grid, label_path)
        if not isinstance(labels, GroundTruthGrid):
            raise ConfigError(f"{label_path}: expected a label grid")
        if spec is not None and labels.spec != spec:
            raise ConfigError(f"{label_path}: label grid {labels.spec} does not match model grid {spec}")
        items.append(DatasetItem(Path(entry["cloud"]).stem, cloud, labels))
    return items


# ---------------------------------------------------------------- training


LOG_COLUMNS = ("epoch", "lambda_t", "mean_loss", "mean_kl", "mean_loss_per_cell")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 5
    augment: bool = True
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def train(
    dataset,
    model_cfg: ModelConfig = ModelConfig(),
    loss_cfg: LossConfig = LossConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    progress=None,
) -> tuple[ModelParams, list[dict]]:
    """Mini-batch Adam over a manifest path or a list of DatasetItem.

    Epoch t (0-based) uses lambda_t = min(1, t / anneal_epochs). Each log
    row holds the epoch's mean per-sample loss, mean per-cell KL regulariser
    and mean per-cell loss. With ``augment`` every sample draw gets its own
    uniform rotation in [0, 2 pi) applied to cloud and labels alike.
    """
    items = dataset if isinstance(dataset, list) else load_dataset(dataset, model_cfg.grid)
    for it in items:
        if it.labels.spec != model_cfg.grid:
            raise ConfigError(f"sample {it.name}: label grid {it.labels.spec} does not match model grid {model_cfg.grid}")
    params = init_params(model_cfg)
    if train_cfg.epochs == 0:
        return params, []
    if not items:
        raise ConfigError("cannot train on an empty dataset")
    opt = AdamState(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)
    rng = np.random.Generator(np.random.Philox(train_cfg.seed))
    log = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(items))
        totals, kls, per_cell = [], [], []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            acc = None
            for idx in batch:
                item = items[idx]
                cloud, labels = item.cloud, item.labels
                if train_cfg.augment:
                    angle = float(rng.uniform(0.0, 2.0 * math.pi))
                    cloud, labels = rotate_z(cloud, angle), rotate_label_grid(labels, angle)
                pillars = pillarize(
                    cloud,
                    model_cfg.grid,
                    model_cfg.max_pillars,
                    model_cfg.max_points,
                    rng_seed=int(rng.integers(2**63)),
                    dtype=model_cfg.np_dtype,
                )
                grads, value = backward(params, pillars, labels, epoch, loss_cfg)
                if not math.isfinite(value.total):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, sample {item.name}")
                totals.append(value.total)
                kls.append(value.mean_kl)
                per_cell.append(value.per_cell)
                if acc is None:
                    acc = {k: g.astype(np.float64) for k, g in grads.items()}
                else:
                    for k, g in grads.items():
                        acc[k] += g
            scale = 1.0 / len(batch)
            step = {k: (g * scale).astype(model_cfg.np_dtype) for k, g in acc.items()}
            if not all(np.all(np.isfinite(g)) for g in step.values()):
                raise TrainingError(f"non-finite gradient at epoch {epoch}")
            opt.update(params, step)
        row = {
            "epoch": epoch,
            "lambda_t": annealing_weight(epoch, loss_cfg.anneal_epochs),
            "mean_loss": math.fsum(totals) / len(totals),
            "mean_kl": math.fsum(kls) / len(kls),
            "mean_loss_per_cell": math.fsum(per_cell) / len(per_cell),
        }
        log.append(row)
        if progress is not None:
            progress(row)
    params.audit()
    return params, log


def log_to_csv(log: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in log:
        writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOG_COLUMNS[1:]])
    return buf.getvalue()


# --------------------------------------------------------------- inference


def predict(params: ModelParams, cloud: PointCloud, spec: GridSpec | None = None) -> EvidentialGrid:
    """Normalise intensities, pillarise with seed 0 and run the network."""
    cfg = params.config
    if spec is not None and spec != cfg.grid:
        raise ConfigError(f"requested grid {spec} does not match model grid {cfg.grid}")
    pillars = pillarize(normalize_intensity(cloud), cfg.grid, cfg.max_pillars, cfg.max_points, rng_seed=0, dtype=cfg.np_dtype)
    return forward(params, pillars)


# ------------------------------------------------------------ serialization

_MAGIC = b"EVWT"
_VERSION = 1
_HEAD = struct.Struct("<4sBI")


def params_to_bytes(params: ModelParams) -> bytes:
    cfg_json = json.dumps(params.config.as_dict(), sort_keys=True).encode()
    blocks = b"".join(params.tensors[name].astype("<f4").tobytes() for name, _ in params.config.shapes())
    return _HEAD.pack(_MAGIC, _VERSION, len(cfg_json)) + cfg_json + blocks


def params_from_bytes(data: bytes, expect: ModelConfig | None = None) -> ModelParams:
    if len(data) < _HEAD.size:
        raise TruncatedError("file shorter than the weights header")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != _MAGIC:
        raise HeaderError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise HeaderError(f"unsupported weights version {version}")
    if len(data) < _HEAD.size + n:
        raise TruncatedError("configuration block cut short")
    try:
        cfg_dict = json.loads(data[_HEAD.size : _HEAD.size + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise HeaderError("configuration block is not valid JSON") from exc
    cfg = ModelConfig.from_dict({**cfg_dict, "dtype": "float32"})
    if expect is not None and ModelConfig.from_dict({**expect.as_dict(), "dtype": "float32"}) != cfg:
        raise ConfigError("weights were saved for a different model configuration")
    payload = data[_HEAD.size + n :]
    need = sum(4 * math.prod(shape) for _, shape in cfg.shapes())
    if len(payload) < need:
        raise TruncatedError(f"parameter blocks hold {len(payload)} bytes, need {need}")
    if len(payload) > need:
        raise DimensionError("trailing bytes after the parameter blocks")
    tensors, offset = {}, 0
    for name, shape in cfg.shapes():
        size = math.prod(shape)
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * size
    return ModelParams(cfg, tensors)


def save_params(path, params: ModelParams) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path, expect: ModelConfig | None = None) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes(), expect)
