"""Glue between the stored dataset, pooling and training.

Pooled outputs live in one directory: per manifest entry a PNG dynamic image
``<key>.png`` and a JSON sidecar ``<key>.json``, plus ``skipped.jsonl``
listing the entries whose source was too short to pool.

Example::

    from dynimg.pipeline import pool_manifest, load_pooled, fit_manifest

    pool_manifest(manifest, cfg)
    manifest, pooled = load_pooled(manifest, cfg.paths.pooled, T=cfg.dataset.T)
    params, trace = fit_manifest(manifest.subset(Split.train), pooled, cfg.train)
"""
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import orjson

from dynimg.dataset import (
    ClipTooShortError,
    DatasetError,
    derive_seed,
    read_clip_frames,
    split_manifest,
)
from dynimg.model import train
from dynimg.models import (
    ConfigError,
    DynamicImage,
    Frame,
    ImageSet,
    LabeledClip,
    Manifest,
    ModelParams,
    PipelineConfig,
    Split,
    TrainConfig,
    TrainTrace,
)
from dynimg.models.json import dumps, write_json
from dynimg.preprocess import augment_frame, preprocess_clip, read_frame, write_frame
from dynimg.rankpool import pool_frames

logger = logging.getLogger(__name__)

SKIP_LOG = "skipped.jsonl"


@dataclass
class PoolResult:
    """Keys written by a pooling run and the records of skipped entries."""

    written: list[str] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)


def entry_seed(seed: int, entry: LabeledClip) -> int:
    """Return the brightness noise seed of ``entry``; stable across runs."""
    return derive_seed(seed, zlib.crc32(entry.key.encode("utf-8")))


def pool_entry(entry: LabeledClip, cfg: PipelineConfig) -> tuple[DynamicImage, Frame]:
    """Read, preprocess and pool the frames of one manifest entry.

    Returns:
        The dynamic image and its display frame, with the augmentation
        filters applied when ``augment_order`` is ``after_pool``

    Raises:
        DatasetError: frames are missing
        ClipTooShortError: the source ends before the clip does
        RankPoolError: pooling failed
    """
    frames = read_clip_frames(cfg.paths.frames, entry)
    clip = preprocess_clip(
        frames,
        cfg.preprocess,
        rect=entry.crop,
        variant=entry.variant,
        seed=entry_seed(cfg.seed, entry),
    )
    image = pool_frames(clip, cfg.rankpool)
    frame = image.to_frame()
    if cfg.preprocess.augment_order == "after_pool":
        frame = augment_frame(frame, entry.variant, cfg.preprocess)
    return image, frame


def sidecar(entry: LabeledClip, image: DynamicImage, cfg: PipelineConfig) -> dict:
    """Return the metadata written next to a pooled image."""
    return {
        **entry.to_record(),
        "key": entry.key,
        "lambda": cfg.rankpool.lam,
        "solver": cfg.rankpool.solver,
        "smooth": cfg.rankpool.smooth,
        "iterations": image.iterations,
        "energy": image.energy,
        "norm_min": image.norm_min,
        "norm_max": image.norm_max,
        "augment_order": cfg.preprocess.augment_order,
        "seed": cfg.seed,
        "width": image.width,
        "height": image.height,
        "channels": image.channels,
    }


def pool_manifest(manifest: Manifest, cfg: PipelineConfig) -> PoolResult:
    """Pool every entry of ``manifest`` into ``cfg.paths.pooled``.

    Entries are pooled concurrently with ``cfg.workers`` threads. Entries
    whose source is too short are skipped with a warning and listed in the
    skip log; any other failure aborts the run.

    Raises:
        DatasetError: frames of an entry are missing
        RankPoolError: pooling failed
    """
    out_dir = cfg.paths.pooled
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(entry: LabeledClip) -> tuple[LabeledClip, dict | None]:
        try:
            image, frame = pool_entry(entry, cfg)
        except ClipTooShortError as exc:
            logger.warning("Skipping %s: %s", entry.key, exc)
            return entry, {**entry.to_record(), "key": entry.key, "reason": str(exc)}
        write_frame(frame, out_dir / f"{entry.key}.png")
        write_json(sidecar(entry, image, cfg), out_dir / f"{entry.key}.json")
        logger.debug("Pooled %s (E=%s)", entry.key, image.energy)
        return entry, None

    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        outcomes = list(executor.map(run, manifest.entries))

    result = PoolResult()
    for entry, skipped in outcomes:
        if skipped is None:
            result.written.append(entry.key)
        else:
            result.skipped.append(skipped)
    (out_dir / SKIP_LOG).write_bytes(
        b"".join(dumps(record, indent=False) + b"\n" for record in result.skipped)
    )
    logger.info(
        "Pooled %d entries into %s, skipped %d",
        len(result.written),
        out_dir,
        len(result.skipped),
    )
    return result


def read_skip_log(pooled_dir: Path) -> set[str]:
    """Return the keys listed in the skip log of ``pooled_dir``."""
    path = pooled_dir / SKIP_LOG
    if not path.is_file():
        return set()
    return {
        orjson.loads(line)["key"]
        for line in path.read_bytes().splitlines()
        if line.strip()
    }


def load_pooled(
    manifest: Manifest, pooled_dir: Path, T: int | None = None  # noqa: N803
) -> tuple[Manifest, dict[str, np.ndarray]]:
    """Read the pooled images of ``manifest``.

    Args:
        manifest: entries to load
        pooled_dir: output directory of ``pool_manifest``
        T: expected window length; every sidecar must agree

    Returns:
        The manifest without skipped entries, and the image ``(H, W, C)``
        of each remaining entry by key

    Raises:
        DatasetError: an output is missing or unreadable
        ConfigError: a sidecar was pooled with a different T
    """
    skipped = read_skip_log(pooled_dir)
    kept: list[LabeledClip] = []
    pooled: dict[str, np.ndarray] = {}
    for entry in manifest.entries:
        if entry.key in skipped:
            continue
        image_path = pooled_dir / f"{entry.key}.png"
        sidecar_path = pooled_dir / f"{entry.key}.json"
        try:
            meta = orjson.loads(sidecar_path.read_bytes())
            pixels = read_frame(image_path).pixels
        except (OSError, orjson.JSONDecodeError) as exc:
            raise DatasetError(f"Missing pooled output for entry {entry.key}: {exc}")
        if T is not None and meta.get("T") != T:
            raise ConfigError(
                f"Pooled entry {entry.key} has T={meta.get('T')}, config has T={T}"
            )
        kept.append(entry)
        pooled[entry.key] = pixels
    if skipped:
        logger.info("Ignoring %d skipped entries", len(manifest) - len(kept))
    return replace(manifest, entries=tuple(kept)), pooled


def image_set(manifest: Manifest, pooled: dict[str, np.ndarray]) -> ImageSet:
    """Stack the pooled images of ``manifest`` with their class indices.

    Raises:
        DatasetError: no entries, or an entry has no pooled image
    """
    if not manifest.entries:
        raise DatasetError("No entries to build an image set from")
    missing = [e.key for e in manifest.entries if e.key not in pooled]
    if missing:
        raise DatasetError(f"No pooled image for entries {', '.join(missing[:5])}")
    return ImageSet(
        images=np.stack([pooled[e.key] for e in manifest.entries]),
        labels=np.array([e.label.index for e in manifest.entries]),
    )


def fit_manifest(
    manifest: Manifest, pooled: dict[str, np.ndarray], cfg: TrainConfig
) -> tuple[ModelParams, TrainTrace]:
    """Train on every entry of ``manifest``.

    A stratified ``cfg.val_fraction`` of the clip groups is held out as the
    early stopping validation set; the entries' own splits are ignored.

    Raises:
        DatasetError: a class has fewer than two clips
        ModelError: training failed
    """
    carved = split_manifest(manifest, cfg.val_fraction, cfg.seed)
    train_set = image_set(carved.subset(Split.train), pooled)
    val_set = image_set(carved.subset(Split.test), pooled)
    logger.info("Training on %d images, validating on %d", len(train_set), len(val_set))
    return train(train_set, val_set, cfg)
