"""Command-line entry point.

Subcommands run the pipeline stages in order::

    dynimg synth --config run.json      # frames + manifest.jsonl
    dynimg pool --config run.json       # pooled/<key>.png + sidecars
    dynimg train --config run.json      # model.dnw + trace.csv
    dynimg eval --config run.json       # eval_report.json + roc.csv
    dynimg crossval --config run.json   # crossval.json

Flags override the config file, which overrides the built-in defaults.
Every command validates the configuration and its inputs before writing
anything.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import orjson

from dynimg.dataset import (
    DatasetError,
    augment_manifest,
    read_manifest,
    split_manifest,
    synth_dataset,
    write_manifest,
)
from dynimg.eval import EvalError, crossval, evaluate, write_roc_csv
from dynimg.model import (
    ModelError,
    load_weights,
    predict_proba,
    save_weights,
    write_trace_csv,
)
from dynimg.models import ConfigError, EvalConfig, Manifest, PipelineConfig, Split
from dynimg.models.json import write_json
from dynimg.pipeline import fit_manifest, image_set, load_pooled, pool_manifest
from dynimg.preprocess import PreprocessError
from dynimg.rankpool import RankPoolError

logger = logging.getLogger(__name__)

_ERRORS = (
    ConfigError,
    DatasetError,
    EvalError,
    ModelError,
    PreprocessError,
    RankPoolError,
    OSError,
)


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Build the run configuration from ``--config`` and the override flags.

    Raises:
        ConfigError: unreadable or invalid configuration
    """
    cfg = PipelineConfig()
    if args.config is not None:
        try:
            mapping = orjson.loads(Path(args.config).read_bytes())
        except OSError as exc:
            raise ConfigError(f"Cannot read config {args.config}: {exc}")
        except orjson.JSONDecodeError as exc:
            raise ConfigError(f"Config {args.config} is not valid JSON: {exc}")
        if not isinstance(mapping, dict):
            raise ConfigError(f"Config {args.config} must hold a JSON object")
        cfg = PipelineConfig.from_dict(mapping)
    cfg = cfg.override(
        seed=args.seed,
        out=args.out,
        solver=args.solver,
        T=args.T,
        workers=args.workers,
    )
    if getattr(args, "k", None) is not None:
        try:
            cfg = replace(cfg, eval=EvalConfig(k=args.k))
        except ValueError as exc:
            raise ConfigError(str(exc))
    return cfg.validate()


def _manifest(cfg: PipelineConfig) -> Manifest:
    return read_manifest(cfg.paths.manifest_path, T=cfg.dataset.T)


def _pooled(cfg: PipelineConfig) -> tuple[Manifest, dict]:
    manifest, pooled = load_pooled(_manifest(cfg), cfg.paths.pooled, T=cfg.dataset.T)
    for key, pixels in pooled.items():
        if pixels.shape != cfg.input_shape:
            raise ConfigError(
                f"Pooled image {key} has shape {pixels.shape}, "
                f"config expects {cfg.input_shape}"
            )
    return manifest, pooled


def cmd_synth(cfg: PipelineConfig) -> None:
    """Render synthetic sources, cut, split and augment clips, write the manifest."""
    cfg.paths.out.mkdir(parents=True, exist_ok=True)
    manifest = synth_dataset(cfg.dataset, cfg.paths.frames, cfg.seed, cfg.workers)
    if len(manifest):
        manifest = split_manifest(manifest, cfg.dataset.test_fraction, cfg.seed)
    manifest = augment_manifest(manifest, cfg.dataset.multiplier)
    write_manifest(manifest, cfg.paths.manifest_path)
    write_json(cfg.to_dict(), cfg.paths.out / "config.json")
    logger.info(
        "Wrote %d manifest entries to %s", len(manifest), cfg.paths.manifest_path
    )


def cmd_pool(cfg: PipelineConfig) -> None:
    """Pool every manifest entry into a dynamic image with a sidecar."""
    pool_manifest(_manifest(cfg), cfg)


def cmd_train(cfg: PipelineConfig) -> None:
    """Train on the train split and write the weights and trace."""
    manifest, pooled = _pooled(cfg)
    params, trace = fit_manifest(manifest.subset(Split.train), pooled, cfg.train)
    save_weights(params, cfg.paths.weights)
    write_trace_csv(trace, cfg.paths.out / "trace.csv")
    logger.info(
        "Best epoch %d of %d (val_loss=%.4f), weights in %s",
        trace.best_epoch,
        trace.stopping_epoch + 1,
        trace.best.val_loss,
        cfg.paths.weights,
    )


def cmd_eval(cfg: PipelineConfig) -> None:
    """Evaluate the trained weights on the test split."""
    try:
        params = load_weights(cfg.paths.weights)
    except FileNotFoundError:
        raise ModelError(f"No weights at {cfg.paths.weights}; run train first")
    if params.input_shape != cfg.input_shape:
        raise ConfigError(
            f"Weights expect input {params.input_shape}, "
            f"preprocess produces {cfg.input_shape}"
        )
    manifest, pooled = _pooled(cfg)
    test_set = image_set(manifest.subset(Split.test), pooled)
    report = evaluate(predict_proba(params, test_set.images)[:, 1], test_set.labels)
    write_json(report, cfg.paths.out / "eval_report.json")
    write_roc_csv(report, cfg.paths.out / "roc.csv")
    logger.info(
        "Test accuracy %.4f, AUC %.4f on %d clips",
        report.accuracy,
        report.auc,
        len(test_set),
    )


def cmd_crossval(cfg: PipelineConfig) -> None:
    """Run k-fold cross-validation over the whole manifest."""
    manifest, pooled = _pooled(cfg)
    summary = crossval(
        manifest,
        pooled,
        cfg.train,
        cfg.eval.k,
        seed=cfg.seed,
        workers=cfg.workers,
    )
    write_json(summary, cfg.paths.out / "crossval.json")
    logger.info(
        "%d folds: accuracy %.4f +/- %.4f, AUC %.4f +/- %.4f",
        summary.k,
        summary.accuracy_mean,
        summary.accuracy_std,
        summary.auc_mean,
        summary.auc_std,
    )


COMMANDS: dict[str, Callable[[PipelineConfig], None]] = {
    "synth": cmd_synth,
    "pool": cmd_pool,
    "train": cmd_train,
    "eval": cmd_eval,
    "crossval": cmd_crossval,
}


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with one subparser per command."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--solver", choices=["exact", "approx"], help="pooling solver")
    common.add_argument("--T", dest="T", type=int, help="frames per clip")
    common.add_argument("--workers", type=int, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="dynimg", description="Dynamic image rumination classifier"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        sub = commands.add_parser(name, parents=[common], help=func.__doc__)
        if name == "crossval":
            sub.add_argument("--k", type=int, help="number of folds")
    return parser


def main(argv: list[str] | None = None) -> int:
    """Run a subcommand; return the process exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg)
    except _ERRORS as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
