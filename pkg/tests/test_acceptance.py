"""End-to-end acceptance suite: one test per criterion, one verdict line each.

Criteria 6 to 8 share a desk-scale run: 50 training and 20 held-out
samples, 30 epochs of training, then a comparison of both inverse sensor
models on the held-out frames.
"""
import contextlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from conftest import ACCEPTANCE_LINES
from oracles import (
    DESK,
    beta_kl,
    bin_returns,
    brute_force,
    first_hit_scalar,
    inside_footprint,
    monte_carlo_cell_loss,
    single_vehicle_case,
    touches_from_sensor,
)

from evogrid.cli import main as cli_main
from evogrid.evaluate import evaluate_run
from evogrid.evidential import (
    BeliefMass,
    DirichletBinary,
    EvidencePair,
    dirichlet_pdf,
    dirichlet_to_evidence,
    dirichlet_to_opinion,
    evidence_to_dirichlet,
    kl_from_uniform,
    mass_to_opinion,
    opinion_to_dirichlet,
    opinion_to_mass,
)
from evogrid.geometric_ism import geometric_ism
from evogrid.grid import DESK_SPEC, GridSpec, GroundTruthGrid, Label, raytrace_cells
from evogrid.loss import CellTarget, LossConfig, annealing_weight, cell_loss, evidence_loss
from evogrid.model import ModelConfig, TrainConfig, backward, init_params, params_to_bytes, train
from evogrid.pointcloud import PointCloud, pillarize, rotate_z
from evogrid.synth import (
    SPARSE_LIDAR,
    LidarConfig,
    SceneParams,
    cast_rays,
    generate_dataset,
    generate_scene,
    ground_truth_from_hd,
    object_hit_counts,
    raycast,
)

# Desk-scale run shared by criteria 6-8.
TRAIN_SEED, TEST_SEED = 1, 2
N_TRAIN, N_TEST = 50, 20
ACCEPT_HD = LidarConfig(channels=1024, vertical_fov=(-25.0, 5.0), noise_sigma=0.01)
ACCEPT_MODEL = ModelConfig(conv_channels=(16,) * 6)
ACCEPT_LOSS = LossConfig()
ACCEPT_TRAIN = TrainConfig(epochs=30, batch_size=5, seed=0)


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS or FAIL for one criterion; details go in ``notes``."""
    notes = []
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        first = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        line = f"criterion {number} FAIL  {title}: {first[:160]}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    detail = "; ".join(notes)
    line = f"criterion {number} PASS  {title} ({time.perf_counter() - start:.1f} s){': ' + detail if detail else ''}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# --------------------------------------------------------------- criterion 1
def test_criterion_1_evidential_algebra():
    with criterion(1, "evidential algebra") as notes:
        start = time.perf_counter()
        rng = np.random.default_rng(1)
        worst = 0.0
        for e_f, e_o in rng.uniform(0, 1000, (2000, 2)):
            e = EvidencePair(float(e_f), float(e_o))
            d = evidence_to_dirichlet(e)
            m = opinion_to_mass(dirichlet_to_opinion(d))
            back = dirichlet_to_evidence(opinion_to_dirichlet(mass_to_opinion(m), u_min=0.0))
            worst = max(worst, abs(back.e_F - e.e_F) / max(1.0, e.e_F), abs(back.e_O - e.e_O) / max(1.0, e.e_O))
        for raw in rng.dirichlet((1, 1, 1), 2000):
            m = BeliefMass(*map(float, raw))
            if m.m_Theta < 1e-6:
                continue
            back = opinion_to_mass(dirichlet_to_opinion(opinion_to_dirichlet(mass_to_opinion(m), u_min=0.0)))
            worst = max(worst, abs(back.m_F - m.m_F), abs(back.m_O - m.m_O), abs(back.m_Theta - m.m_Theta))
        assert worst <= 1e-12, f"round-trip error {worst:.2e}"
        notes.append(f"round trip {worst:.1e}")

        norm_err = 0.0
        for a in [(1, 1), (2, 1), (4, 2), (0.5, 0.5), (30, 3), (101, 1)]:
            z = integrate.quad(lambda p: dirichlet_pdf(DirichletBinary(*a), (p, 1 - p)), 0, 1, limit=200, epsabs=1e-12)[0]
            norm_err = max(norm_err, abs(z - 1))
        assert norm_err <= 1e-6, f"pdf normalisation off by {norm_err:.2e}"
        notes.append(f"pdf mass {norm_err:.1e}")

        kl = kl_from_uniform(DirichletBinary(2, 1))
        quad = beta_kl((2.0, 1.0), (1.0, 1.0))
        assert abs(kl - quad) <= 1e-9 and abs(kl - (math.log(2) - 0.5)) <= 1e-9, f"KL {kl!r} vs quadrature {quad!r}"
        notes.append(f"KL(2,1) err {abs(kl - quad):.1e}")
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"took {elapsed:.1f} s"


# --------------------------------------------------------------- criterion 2
def test_criterion_2_loss_oracles():
    with criterion(2, "loss oracles") as notes:
        start = time.perf_counter()
        mean, se = monte_carlo_cell_loss((4.0, 2.0), (1.0, 0.0), 10**7, seed=2)
        value = cell_loss(EvidencePair(3, 1), CellTarget(1, 0))
        assert abs(value - mean) <= 3 * se, f"{value} vs MC {mean} +- {se}"
        notes.append(f"MC gap {abs(value - mean) / se:.2f} sigma")

        rng = np.random.default_rng(3)
        worst = 0.0
        cfg = LossConfig()
        for epoch in (0, 5, 10):
            e = rng.uniform(1e-3, 50.0, (200, 2))
            labels = rng.integers(0, 3, 200)
            _, grad = evidence_loss(e, labels, epoch, cfg, with_gradient=True)
            for i in range(200):
                for k in range(2):
                    up, down = e[i : i + 1].copy(), e[i : i + 1].copy()
                    up[0, k] += 1e-4
                    down[0, k] -= 1e-4
                    fd = (
                        evidence_loss(up, labels[i : i + 1], epoch, cfg).total
                        - evidence_loss(down, labels[i : i + 1], epoch, cfg).total
                    ) / 2e-4
                    worst = max(worst, abs(grad[i, k] - fd) / max(abs(grad[i, k]), abs(fd), 1e-6))
        assert worst < 1e-5, f"gradient relative error {worst:.2e}"
        notes.append(f"gradient rel err {worst:.1e}")

        lams = [annealing_weight(t) for t in (0, 5, 10, 11, 100)]
        assert lams == [0.0, 0.5, 1.0, 1.0, 1.0], lams
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"took {elapsed:.1f} s"


# --------------------------------------------------------------- criterion 3
def test_criterion_3_model_gradient_check():
    with criterion(3, "model gradient check") as notes:
        start = time.perf_counter()
        spec = GridSpec(16, 16, 0.5)
        cfg = ModelConfig(pillar_feature_dim=6, conv_channels=(5, 4), grid=spec, max_pillars=128, max_points=8, seed=3, dtype="float64")
        params = init_params(cfg)
        rng = np.random.default_rng(0)
        for name, t in params.tensors.items():
            if name.endswith(".bias"):
                t[:] = rng.uniform(0.05, 0.3, t.shape)
        pts = np.column_stack(
            [rng.uniform(-3.9, 3.9, 400), rng.uniform(-3.9, 3.9, 400), rng.uniform(-2.0, 0.5, 400), rng.uniform(0, 1, 400)]
        )
        pillars = pillarize(PointCloud(pts), spec, 128, 8, dtype=np.float64)
        truth = GroundTruthGrid(spec, rng.integers(0, 3, spec.shape))
        grads, _ = backward(params, pillars, truth, 7)
        names = list(params.tensors)
        worst, n = 0.0, 0
        h = 1e-6
        for _ in range(150):
            name = names[rng.integers(len(names))]
            t = params.tensors[name]
            idx = tuple(int(rng.integers(s)) for s in t.shape)
            old = t[idx]
            t[idx] = old + h
            up = backward(params, pillars, truth, 7)[1].total
            t[idx] = old - h
            down = backward(params, pillars, truth, 7)[1].total
            t[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(grads[name][idx] - fd) / max(abs(grads[name][idx]), abs(fd), 1e-8))
            n += 1
        assert n >= 100
        assert worst < 1e-6, f"relative error {worst:.2e}"
        notes.append(f"{n} parameters, max rel err {worst:.1e}")
        elapsed = time.perf_counter() - start
        assert elapsed < 120.0, f"took {elapsed:.1f} s"


# --------------------------------------------------------------- criterion 4
def test_criterion_4_geometric_ism():
    with criterion(4, "geometric ISM properties") as notes:
        spec = GridSpec(64, 64, 0.5)
        sensor_h = 1.9

        def cloud_of(points):
            return PointCloud(np.array([[x, y, h - sensor_h, 0.5] for x, y, h in points]).reshape(-1, 4), sensor_h)

        x, y = 10.1, 0.3
        grid = geometric_ism(cloud_of([(x, y, 1.0)]), spec).evidence
        target = (math.floor(x / spec.cell_m + spec.rows / 2), math.floor(y / spec.cell_m + spec.cols / 2))
        expected = np.zeros(spec.shape + (2,), dtype=np.float32)
        for i in range(spec.rows):
            for j in range(spec.cols):
                if (i, j) != target and touches_from_sensor((i, j), target, spec):
                    expected[i, j] = (18.0, 0.0)
        expected[target] = (0.0, 18.0)
        assert np.array_equal(grid, expected), "band point map differs from the exact oracle"
        assert not geometric_ism(cloud_of([(x, y, 0.2)]), spec).evidence.any(), "below-band point left a mark"
        notes.append(f"band point carves {int((expected[..., 0] > 0).sum())} cells")

        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.uniform(-28, 28, 300), rng.uniform(-28, 28, 300), rng.uniform(0, 2.6, 300)])
        cloud = cloud_of(pts)
        base = geometric_ism(cloud, DESK_SPEC).evidence
        lo = (DESK_SPEC.rows - DESK_SPEC.cols) // 2
        square = slice(lo, lo + DESK_SPEC.cols)
        for k in (1, 2, 3):
            turned = geometric_ism(rotate_z(cloud, k * math.pi / 2), DESK_SPEC).evidence
            assert np.array_equal(turned[square], np.rot90(base[square], k)), f"rotation by {k} quarter turns differs"
        notes.append("quarter turns exact on 88x88 square")

        grid32 = GridSpec(32, 32, 1.0)
        for _ in range(1000):
            start, end = tuple(rng.uniform(-17, 17, 2)), tuple(rng.uniform(-17, 17, 2))
            assert set(raytrace_cells(grid32, start, end)) == brute_force(grid32, start, end), (start, end)
        notes.append("1000 segments match brute force")


# --------------------------------------------------------------- criterion 5
def test_criterion_5_synthetic_data():
    with criterion(5, "synthetic data soundness") as notes:
        rays_checked = 0
        for seed in range(20):
            scene = generate_scene(seed)
            cfg = LidarConfig(channels=16, azimuth_step=2.0, noise_sigma=0.0)
            rays = cast_rays(scene, cfg)
            for k in range(rays.distance.size):
                idx = np.unravel_index(k, rays.distance.shape)
                t, oid, mat = first_hit_scalar(scene, cfg.mount_height, (float(rays.dx[idx]), float(rays.dy[idx]), float(rays.dz[idx])))
                got = float(rays.distance[idx])
                if math.isinf(t):
                    assert math.isinf(got), f"scene {seed}: phantom return"
                else:
                    assert abs(got - t) <= 1e-9 * max(1.0, t), f"scene {seed}: distance {got} vs {t}"
                    assert int(rays.object_id[idx]) == oid and int(rays.material[idx]) == mat, f"scene {seed}: wrong surface"
                rays_checked += 1

            sparse = raycast(scene, LidarConfig(channels=16, azimuth_step=1.0, noise_sigma=0.0), seed)
            hd = raycast(scene, LidarConfig(channels=96, azimuth_step=0.4, noise_sigma=0.01), seed + 1)
            counts = bin_returns(hd, DESK)
            plain = ground_truth_from_hd(scene, hd, sparse, DESK, min_hits=10**9)
            full = ground_truth_from_hd(scene, hd, sparse, DESK)
            for r, c in zip(*np.nonzero(plain.labels == Label.OCCUPIED)):
                assert counts[(r, c)][1] >= 1, f"scene {seed}: occupied cell without a non-ground return"
            for labels in (plain.labels, full.labels):
                for r, c in zip(*np.nonzero(labels == Label.FREE)):
                    g, n = counts[(r, c)]
                    assert g >= 1 and n == 0, f"scene {seed}: free cell with obstacle returns"
            assert np.all(full.labels[full.labels != plain.labels] == Label.OCCUPIED)
        notes.append(f"{rays_checked} rays vs brute force over 20 scenes")

        car, scene, sparse, hd = single_vehicle_case()
        n = object_hit_counts(sparse)[car.object_id]
        assert n >= 50
        at = ground_truth_from_hd(scene, hd, sparse, DESK, min_hits=n)
        above = ground_truth_from_hd(scene, hd, sparse, DESK, min_hits=n + 1)
        rows, cols = np.meshgrid(np.arange(DESK.rows), np.arange(DESK.cols), indexing="ij")
        under = inside_footprint(car, (rows + 0.5 - DESK.rows / 2) * DESK.cell_m, (cols + 0.5 - DESK.cols / 2) * DESK.cell_m)
        assert np.all(at.labels[under] == Label.OCCUPIED), "footprint not filled at the threshold"
        assert np.any(above.labels[under] != Label.OCCUPIED), "footprint filled below the threshold"
        notes.append(f"footprint flips at {n} hits")


# ------------------------------------------------------------ desk-scale run
@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    generate_dataset(root / "train", N_TRAIN, TRAIN_SEED, SceneParams(), SPARSE_LIDAR, ACCEPT_HD, DESK_SPEC)
    generate_dataset(root / "test", N_TEST, TEST_SEED, SceneParams(), SPARSE_LIDAR, ACCEPT_HD, DESK_SPEC)
    t1 = time.perf_counter()
    params, log = train(root / "train", ACCEPT_MODEL, ACCEPT_LOSS, ACCEPT_TRAIN)
    report = evaluate_run(root / "test", params, out_dir=root / "report")
    t2 = time.perf_counter()
    return dict(root=root, params=params, log=log, report=report, gen_s=t1 - t0, train_eval_s=t2 - t1)


def _per_ism(report, key):
    rows = {(f.frame, f.ism): getattr(f, key) for f in report.frames}
    frames = sorted({f.frame for f in report.frames})
    return [rows[(fr, "deep")] for fr in frames], [rows[(fr, "geometric")] for fr in frames]


def test_criterion_6_deep_ism_is_less_uncertain(desk_run):
    with criterion(6, "deep m(Theta) below geometric") as notes:
        report = desk_run["report"]
        assert not report.errors
        deep, geom = _per_ism(report, "m_unknown")
        assert len(deep) == N_TEST
        wins = sum(d < g for d, g in zip(deep, geom))
        notes.append(f"{wins}/{N_TEST} frames; mean {np.mean(deep):.3f} vs {np.mean(geom):.3f}")
        assert wins >= math.ceil(0.9 * N_TEST), f"only {wins}/{N_TEST} frames"


def test_criterion_7_deep_ism_closer_to_truth(desk_run):
    with criterion(7, "deep KL-to-truth below geometric") as notes:
        report = desk_run["report"]
        agg = {row["ism"]: row for row in report.aggregate}
        deep, geom = _per_ism(report, "mean_kl")
        wins = sum(d < g for d, g in zip(deep, geom))
        notes.append(
            f"aggregate {agg['deep']['mean_kl']:.2f} vs {agg['geometric']['mean_kl']:.2f}; "
            f"{wins}/{N_TEST} frames; train+eval {desk_run['train_eval_s'] / 60:.1f} min"
        )
        assert agg["deep"]["mean_kl"] < agg["geometric"]["mean_kl"], "aggregate KL not lower"
        assert wins >= math.ceil(0.8 * N_TEST), f"only {wins}/{N_TEST} frames"
        assert desk_run["train_eval_s"] < 30 * 60


def test_criterion_8_training_sanity(desk_run):
    with criterion(8, "training sanity") as notes:
        log = desk_run["log"]
        losses = [row["mean_loss"] for row in log]
        assert len(losses) == ACCEPT_TRAIN.epochs
        assert all(math.isfinite(v) for v in losses + [row["mean_kl"] for row in log])
        ratio = losses[-1] / losses[0]
        notes.append(f"epoch 30 / epoch 1 loss = {ratio:.4f}")
        again, _ = train(desk_run["root"] / "train", ACCEPT_MODEL, ACCEPT_LOSS, ACCEPT_TRAIN)
        identical = params_to_bytes(again) == params_to_bytes(desk_run["params"])
        notes.append("rerun bit-identical" if identical else "rerun differs")
        assert identical, "same seed gave different weights"
        assert ratio <= 0.5, f"loss ratio {ratio:.3f} > 0.5"


# --------------------------------------------------------------- criterion 9
PIPELINE_CONFIG = {
    "grid": {"rows": 48, "cols": 48, "cell_m": 0.5},
    "scene": {"n_vehicles": 3, "n_pedestrians": 2, "n_static": 2, "extent": [24, 24], "road_half_width": 4},
    "sparse_lidar": {"channels": 16, "azimuth_step": 1.0},
    "hd_lidar": {"channels": 64, "azimuth_step": 0.5},
    "model": {"pillar_feature_dim": 8, "conv_channels": [8, 8], "max_pillars": 1500, "max_points": 32},
    "train": {"epochs": 3, "batch_size": 2},
}


def run_pipeline(work: Path):
    work.mkdir()
    cfg = work / "config.json"
    cfg.write_text(json.dumps(PIPELINE_CONFIG))
    steps = [
        ["gen-data", "--config", cfg, "--out", work / "train", "--n", 4, "--seed", 5],
        ["gen-data", "--config", cfg, "--out", work / "test", "--n", 2, "--seed", 6],
        ["geometric", "--config", cfg, "--manifest", work / "test", "--out", work / "geom"],
        ["train", "--config", cfg, "--manifest", work / "train", "--out-weights", work / "w.evw", "--log", work / "train.csv"],
        ["predict", "--weights", work / "w.evw", "--cloud", work / "test" / "00000.evpc", "--out", work / "pred.evgrid"],
        ["eval", "--config", cfg, "--manifest", work / "test", "--weights", work / "w.evw", "--out-dir", work / "eval"],
        ["render", "--grid", work / "pred.evgrid", "--out", work / "pred.ppm"],
    ]
    for argv in steps:
        code = cli_main([str(a) for a in argv])
        assert code == 0, f"{argv[0]} exited {code}"
    return {p.relative_to(work).as_posix(): p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}


def test_criterion_9_pipeline_determinism(tmp_path):
    with criterion(9, "end-to-end determinism") as notes:
        first = run_pipeline(tmp_path / "a")
        second = run_pipeline(tmp_path / "b")
        assert set(first) == set(second)
        differing = sorted(k for k in first if first[k] != second[k])
        notes.append(f"{len(first)} artifacts, {len(differing)} differ")
        assert not differing, f"differing artifacts: {differing[:5]}"
        for required in ("w.evw", "pred.evgrid", "pred.ppm", "eval/report.csv", "eval/report_aggregate.csv", "geom/00000.evgrid"):
            assert required in first, required
