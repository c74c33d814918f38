"""Command-line entry point wiring the full pipeline.

Subcommands: preprocess, train, resume, generate, evaluate, survey,
pipeline, version.  Exit codes: 0 success, 1 validation/usage error,
2 runtime or numeric error.  Every subcommand echoes its fully resolved
configuration into the output directory.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import metrics as met
from . import model as mdl
from . import plotting
from . import survey as sv
from . import trainer as tr
from .config import RunConfig
from .errors import ConfigError, RuntimeFailure, ValidationError
from .rng import Rng, derive_seed

logger = logging.getLogger("artgan")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    p = _Parser(prog="artgan",
                description="Desk-scale style-based GAN toolkit: preprocess, "
                            "train, generate, score (FID/KID), and aggregate "
                            "case-study ratings.")
    sub = p.add_subparsers(dest="command")

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--out", help=out_help)

    sp = sub.add_parser("preprocess", help="scan a corpus and write its manifest")
    common(sp)
    sp.add_argument("--data-dir", help="image corpus directory")
    sp.add_argument("--resolution", type=int, help="target square resolution")

    sp = sub.add_parser("train", help="train from scratch")
    common(sp)
    sp.add_argument("--data-dir")
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--total-iterations", type=int)
    sp.add_argument("--augment-flip", action="store_true", default=None)

    sp = sub.add_parser("resume", help="continue training from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data-dir")
    sp.add_argument("--total-iterations", type=int)

    sp = sub.add_parser("generate", help="sample images from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--count", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("evaluate", help="score real vs generated sets")
    common(sp, out_help="report path (report.json)")
    sp.add_argument("--real", required=True, help="image directory or .feat file")
    sp.add_argument("--gen", required=True, help="image directory or .feat file")
    sp.add_argument("--extractor", default=None,
                    help="pool | randproj-K | file (default: pool)")
    sp.add_argument("--kid-block", type=int, default=None)
    sp.add_argument("--resolution", type=int)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("survey", help="aggregate case-study responses")
    common(sp, out_help="report path (report.json)")
    sp.add_argument("--responses", help="response CSV")
    sp.add_argument("--allow-partial", action="store_true", default=None)

    sp = sub.add_parser("pipeline", help="preprocess, train, generate, evaluate")
    common(sp)
    sp.add_argument("--data-dir")

    sub.add_parser("version", help="print the toolkit version")
    return p


def _load_config(args, **flag_map) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key, value in flag_map.items():
        if value is not None:
            cfg.set(key, value)
    return cfg


def _out_dir(cfg: RunConfig, required: bool = True) -> Path:
    out = cfg["out_dir"]
    if not out:
        if required:
            raise ConfigError("an output directory is required (--out or out_dir)")
        return Path(".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(cfg: RunConfig) -> ds.DatasetManifest:
    if not cfg["data_dir"]:
        raise ConfigError("a data directory is required (--data-dir or data_dir)")
    return ds.filter_rgb(ds.scan_directory(cfg["data_dir"], cfg["resolution"]))


def _images_from_manifest(manifest: ds.DatasetManifest) -> np.ndarray:
    if not manifest.records:
        raise ConfigError("manifest holds no usable RGB images")
    return np.stack([ds.load_image(r.path, manifest.target_resolution)
                     for r in manifest.records])


def cmd_preprocess(args) -> int:
    cfg = _load_config(args, data_dir=args.data_dir, resolution=args.resolution,
                       out_dir=args.out)
    out = _out_dir(cfg)
    manifest = _manifest(cfg)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    cfg.write_echo(out)
    c = manifest.counts
    print(f"scanned {c['scanned']}, kept {c['kept']}, "
          f"dropped non-RGB {c['dropped_non_rgb']}, "
          f"unreadable {c['dropped_unreadable']}")
    return 0


def _run_training(cfg: RunConfig, out: Path, state, train_config) -> None:
    manifest = _manifest(cfg)
    batcher = ds.Batcher(manifest, train_config.batch_size, train_config.seed,
                         train_config.augment_flip)
    real_feats = met.extract_features(_images_from_manifest(manifest),
                                      train_config.extractor)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tr.train_loop(state, train_config, batcher, checkpoint_dir=ckpt_dir,
                  real_features=real_feats, use_stop_rule=True,
                  progress=lambda it, fid_value: logger.info(
                      "iteration %d: FID %.3f", it, fid_value))
    tr.save_checkpoint(state, train_config, ckpt_dir / "ckpt-final.bin")
    plotting.save_training_curves(state.loss_d_history, state.loss_g_history,
                                  state.fid_history, out / "training-curves.png")


def cmd_train(args) -> int:
    cfg = _load_config(args, data_dir=args.data_dir, resolution=args.resolution,
                       seed=args.seed, batch_size=args.batch_size,
                       total_iterations=args.total_iterations,
                       augment_flip=args.augment_flip, out_dir=args.out)
    out = _out_dir(cfg)
    cfg.write_echo(out)
    train_config = cfg.train_config()
    state = tr.init_train_state(train_config)
    _run_training(cfg, out, state, train_config)
    print(f"trained {state.iteration} iterations; checkpoints in {out / 'checkpoints'}")
    return 0


def cmd_resume(args) -> int:
    state, train_config = tr.resume(args.checkpoint)
    cfg = _load_config(args, data_dir=args.data_dir, out_dir=args.out,
                       total_iterations=args.total_iterations)
    for key, value in (("resolution", train_config.resolution),
                       ("seed", train_config.seed),
                       ("batch_size", train_config.batch_size)):
        cfg.set(key, value)
    if args.total_iterations is not None:
        train_config.total_iterations = args.total_iterations
    out = _out_dir(cfg)
    cfg.write_echo(out)
    _run_training(cfg, out, state, train_config)
    print(f"resumed to iteration {state.iteration}; checkpoints in {out / 'checkpoints'}")
    return 0


def _write_samples(state, train_config, count: int, seed: int, out: Path) -> np.ndarray:
    rng = Rng(seed)
    images = tr.sample_images(state, train_config, count, rng)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(mdl.to_uint8(images)):
        plotting.save_png(img, out / f"sample-{i:03d}.png")
    return images


def cmd_generate(args) -> int:
    state, train_config = tr.load_checkpoint(args.checkpoint)
    cfg = _load_config(args, out_dir=args.out, seed=args.seed)
    out = _out_dir(cfg)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    _write_samples(state, train_config, args.count, args.seed, out)
    cfg.write_echo(out)
    print(f"wrote {args.count} samples to {out}")
    return 0


def _resolve_feature_source(path_str: str, extractor: str, resolution: int):
    path = Path(path_str)
    if path.is_file():
        return met.load_features(path)
    if path.is_dir():
        if extractor == "file":
            raise ConfigError(f"--extractor file requires feature files, got "
                              f"directory {path_str!r}")
        manifest = ds.filter_rgb(ds.scan_directory(path, resolution))
        return met.extract_features(_images_from_manifest(manifest), extractor)
    raise FileNotFoundError(f"no such file or directory: {path_str}")


def _emit_metric_report(report: met.MetricReport, json_path: Path) -> None:
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    json_path.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    plotting.save_metric_figure(report, json_path.with_suffix(".png"))


def _capped_kid_config(cfg: RunConfig, *sets) -> met.KidConfig:
    # the kid op rejects oversized blocks; the orchestrator caps instead
    kid_cfg = cfg.kid_config()
    n_min = min(s.matrix.shape[0] for s in sets)
    block = kid_cfg.block_size if kid_cfg.block_size is not None else min(n_min, 100)
    if block > n_min:
        logger.info("capping KID block size at %d (set size)", n_min)
        block = n_min
    kid_cfg.block_size = block
    return kid_cfg


def cmd_evaluate(args) -> int:
    cfg = _load_config(args, resolution=args.resolution, seed=args.seed,
                       extractor=args.extractor, kid_block_size=args.kid_block)
    if not args.out:
        raise ConfigError("--out report path is required")
    extractor = cfg["extractor"]
    resolution = cfg["resolution"]
    real = _resolve_feature_source(args.real, extractor, resolution)
    gen = _resolve_feature_source(args.gen, extractor, resolution)
    report = met.evaluate(real, gen, extractor,
                          _capped_kid_config(cfg, real, gen), cfg["seed"])
    json_path = Path(args.out)
    _emit_metric_report(report, json_path)
    cfg.set("out_dir", str(json_path.parent))
    cfg.write_echo(json_path.parent)
    print(report.to_csv().strip())
    return 0


def cmd_survey(args) -> int:
    cfg = _load_config(args, responses=args.responses,
                       allow_partial=args.allow_partial)
    if not cfg["responses"]:
        raise ConfigError("a responses CSV is required (--responses)")
    if not args.out:
        raise ConfigError("--out report path is required")
    rows = sv.parse_responses(cfg["responses"])
    report = sv.aggregate(rows, allow_partial=cfg["allow_partial"])
    json_path = Path(args.out)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    sv.emit_report(report, "json", json_path)
    sv.emit_report(report, "csv", json_path.with_suffix(".csv"))
    plotting.save_survey_figure(report, json_path.with_suffix(".png"))
    cfg.set("out_dir", str(json_path.parent))
    cfg.write_echo(json_path.parent)
    for group in sv.GROUPS:
        pct = 100.0 * report.attribution[group]
        print(f"{group}: judged artist-made {pct:.1f}% of the time")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args, data_dir=args.data_dir, out_dir=args.out)
    out = _out_dir(cfg)
    cfg.write_echo(out)
    train_config = cfg.train_config()

    manifest = _manifest(cfg)
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    real_images = _images_from_manifest(manifest)
    real_feats = met.extract_features(real_images, train_config.extractor)

    batcher = ds.Batcher(manifest, train_config.batch_size, train_config.seed,
                         train_config.augment_flip)
    state = tr.init_train_state(train_config)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tr.train_loop(state, train_config, batcher, checkpoint_dir=ckpt_dir,
                  real_features=real_feats, use_stop_rule=True,
                  progress=lambda it, fid_value: logger.info(
                      "iteration %d: FID %.3f", it, fid_value))
    tr.save_checkpoint(state, train_config, ckpt_dir / "ckpt-final.bin")
    plotting.save_training_curves(state.loss_d_history, state.loss_g_history,
                                  state.fid_history, out / "training-curves.png")

    count = cfg["generate_count"]
    sample_seed = derive_seed(train_config.seed, "pipeline-samples")
    images = _write_samples(state, train_config, count, sample_seed, out / "samples")
    plotting.save_sample_grid(mdl.to_uint8(images), out / "samples" / "grid.png")

    gen_feats = met.extract_features(np.clip(images, -1.0, 1.0),
                                     train_config.extractor)
    report = met.evaluate(real_feats, gen_feats, train_config.extractor,
                          _capped_kid_config(cfg, real_feats, gen_feats),
                          train_config.seed)
    _emit_metric_report(report, out / "report.json")
    print(report.to_csv().strip())
    return 0


def dispatch(argv) -> int:
    """Run one subcommand; exit code 0/1/2 per the error contract."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        if args.command == "version":
            print(f"artgan {__version__}")
            return 0
        handler = {
            "preprocess": cmd_preprocess,
            "train": cmd_train,
            "resume": cmd_resume,
            "generate": cmd_generate,
            "evaluate": cmd_evaluate,
            "survey": cmd_survey,
            "pipeline": cmd_pipeline,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(dispatch(sys.argv[1:]))
