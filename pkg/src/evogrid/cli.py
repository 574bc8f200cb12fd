"""Command-line front end: data generation, mapping, training, prediction, evaluation, rendering.

Failures print one line to standard error of the form

    evogrid: error: <kind>: <message>

and exit with 2 (usage), 3 (unreadable or malformed input file),
4 (configuration) or 1 (anything else). Progress goes to standard error;
standard output stays empty.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config
from .errors import ConfigError, EvogridError, FormatError
from .evaluate import evaluate_run
from .geometric_ism import geometric_ism
from .grid import GridSpec, load_grid, render_ppm, save_grid
from .model import load_manifest, load_params, log_to_csv, predict, save_params, train
from .pointcloud import load_cloud
from .synth import generate_dataset

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3, 4
log = logging.getLogger("evogrid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    text = " ".join(str(message).split())
    print(f"evogrid: error: {kind}: {text}", file=sys.stderr)
    return code


def _read(loader, path):
    """Call ``loader(path)``, prefixing format errors with the file name."""
    try:
        return loader(path)
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _manifest_grid(manifest) -> GridSpec | None:
    doc, _ = load_manifest(manifest)
    grid = doc.get("grid")
    if grid is None:
        return None
    try:
        return GridSpec(**grid)
    except (TypeError, EvogridError) as exc:
        raise ConfigError(f"{manifest}: bad grid entry ({exc})") from None


# ------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg: RunConfig) -> int:
    n = cfg.n_samples if args.n is None else args.n
    seed = cfg.seed if args.seed is None else args.seed
    generate_dataset(
        args.out, n, seed, cfg.scene, cfg.sparse_lidar, cfg.hd_lidar, cfg.grid, cfg.min_hits, workers=args.threads
    )
    log.info("wrote %d samples to %s", n, args.out)
    return EXIT_OK


def cmd_geometric(args, cfg: RunConfig) -> int:
    if args.cloud:
        save_grid(args.out, geometric_ism(_read(load_cloud, args.cloud), cfg.grid, cfg.geometric))
        return EXIT_OK
    doc, root = load_manifest(args.manifest)
    spec = _manifest_grid(args.manifest) or cfg.grid
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in doc["samples"]:
        name = Path(entry["cloud"]).stem
        save_grid(out / f"{name}.evgrid", geometric_ism(_read(load_cloud, root / entry["cloud"]), spec, cfg.geometric))
    log.info("mapped %d clouds into %s", len(doc["samples"]), out)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    train_cfg = cfg.train
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    model_cfg = cfg.model
    spec = _manifest_grid(args.manifest)
    if spec is not None:
        model_cfg = replace(model_cfg, grid=spec)

    def progress(row):
        log.info("epoch %d lambda %.2f loss %.6g kl %.6g", row["epoch"], row["lambda_t"], row["mean_loss"], row["mean_kl"])

    params, history = train(args.manifest, model_cfg, cfg.loss, train_cfg, progress=progress)
    save_params(args.out_weights, params)
    if args.log:
        Path(args.log).write_text(log_to_csv(history))
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    params = _read(load_params, args.weights)
    save_grid(args.out, predict(params, _read(load_cloud, args.cloud)))
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    params = _read(load_params, args.weights)
    report = evaluate_run(args.manifest, params, cfg.geometric, cfg.truth, out_dir=args.out_dir, workers=args.threads)
    for row in report.aggregate:
        log.info("%s: frames %d, mean m(Theta) %.4f, mean KL %.4f", row["ism"], row["n_frames"], row["m_unknown"], row["mean_kl"])
    if report.errors:
        for err in report.errors[1:]:
            log.warning("%s", err)
        return _fail("io", f"{len(report.errors)} frame(s) unreadable; first: {report.errors[0]}", EXIT_IO)
    return EXIT_OK


def cmd_render(args, cfg: RunConfig) -> int:
    Path(args.out).write_bytes(render_ppm(_read(load_grid, args.grid)))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="JSON", help="run configuration file; flags override its values")
    common.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1, metavar="N",
        help="worker threads for data generation and evaluation (default: available cores); results do not depend on it",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")

    parser = _Parser(prog="evogrid", description="Evidential occupancy grid mapping from lidar point clouds.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, help="number of samples (default: config n_samples)")
    p.add_argument("--seed", type=int, help="dataset seed (default: config seed)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("geometric", parents=[common], help="run the geometric inverse sensor model")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cloud", help="single .evpc point cloud")
    src.add_argument("--manifest", help="dataset manifest or directory; maps every cloud")
    p.add_argument("--out", required=True, help=".evgrid file for --cloud, directory for --manifest")
    p.set_defaults(func=cmd_geometric)

    p = sub.add_parser("train", parents=[common], help="train the deep inverse sensor model")
    p.add_argument("--manifest", required=True, help="training dataset manifest or directory")
    p.add_argument("--out-weights", required=True, help="output .evw weights file")
    p.add_argument("--log", help="optional CSV training log")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict an evidential grid from a point cloud")
    p.add_argument("--weights", required=True, help=".evw weights file")
    p.add_argument("--cloud", required=True, help=".evpc point cloud")
    p.add_argument("--out", required=True, help="output .evgrid file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="compare both inverse sensor models on a labelled dataset")
    p.add_argument("--manifest", required=True, help="test dataset manifest or directory")
    p.add_argument("--weights", required=True, help=".evw weights file")
    p.add_argument("--out-dir", required=True, help="directory for report.csv, report_aggregate.csv and images")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="render an .evgrid file as a PPM image")
    p.add_argument("--grid", required=True, help="input .evgrid file")
    p.add_argument("--out", required=True, help="output .ppm file")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.threads < 1:
        return _fail("usage", "--threads must be at least 1", EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="evogrid: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, _config(args))
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except OSError as exc:
        where = exc.filename or ""
        return _fail("io", f"{where}: {exc.strerror}" if where else exc, EXIT_IO)
    except FormatError as exc:
        return _fail("io", exc, EXIT_IO)
    except EvogridError as exc:
        return _fail("runtime", exc, EXIT_OTHER)
    except Exception as exc:  # last resort: keep the one-line contract
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
