"""Clip windowing, manifests, splits and the synthetic clip generator.

Frames are stored one directory per source, as zero-padded numbered image
files (``000001.png``, ...). The manifest is a line-delimited JSON file with
one clip per line.

Example::

    from dynimg.dataset import read_manifest, read_clip_frames

    manifest = read_manifest(Path("runs/manifest.jsonl"))
    for clip in manifest.entries:
        frames = read_clip_frames(Path("runs/frames"), clip)
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import orjson
from sklearn.model_selection import StratifiedKFold

from dynimg.models import (
    ConfigError,
    DatasetConfig,
    Frame,
    Label,
    LabeledClip,
    Manifest,
    Split,
)
from dynimg.preprocess import read_frame, write_frame

logger = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".pgm", ".ppm")


class DatasetError(Exception):
    """Exception for invalid dataset parameters or missing data."""

    pass


class ClipTooShortError(DatasetError):
    """Exception for sources holding fewer frames than a clip needs."""

    pass


def derive_seed(*keys: int) -> int:
    """Return a seed determined only by ``keys``."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def window(
    frame_count: int, T: int, stride: int | None = None  # noqa: N803
) -> list[tuple[int, int]]:
    """Cut a frame stream into complete windows.

    Args:
        frame_count: frames available in the source
        T: window length
        stride: offset between window starts, defaults to ``T``

    Returns:
        ``(start, T)`` ranges; a trailing partial window is dropped

    Raises:
        DatasetError: T < 2 or stride < 1
    """
    stride = T if stride is None else stride
    if T < 2:
        raise DatasetError(f"T must be >= 2, got {T}")
    if stride < 1:
        raise DatasetError(f"stride must be >= 1, got {stride}")
    return [(start, T) for start in range(0, frame_count - T + 1, stride)]


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def split_manifest(manifest: Manifest, test_fraction: float, seed: int) -> Manifest:
    """Assign every entry to train or test, stratified by label.

    Clips are split as groups: all augmentation variants of a clip land in
    the same split. ``round(test_fraction * groups)`` groups go to test,
    apportioned to classes by largest remainder, and every class keeps at
    least one group on each side.

    Raises:
        DatasetError: fraction outside (0, 1) or a class with fewer than 2 clips
    """
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")

    group_label: dict[tuple[str, int], Label] = {}
    for entry in manifest.entries:
        group_label.setdefault(entry.group, entry.label)
    by_label: dict[Label, list[tuple[str, int]]] = {}
    for group, label in group_label.items():
        by_label.setdefault(label, []).append(group)
    for label, groups in by_label.items():
        if len(groups) < 2:
            raise DatasetError(
                f"Cannot stratify: class {label.value!r} has {len(groups)} clip(s)"
            )

    labels = sorted(by_label, key=lambda label: label.value)
    quotas = {label: test_fraction * len(by_label[label]) for label in labels}
    counts = {label: math.floor(quotas[label]) for label in labels}
    left = _round_half_up(test_fraction * len(group_label)) - sum(counts.values())
    by_remainder = sorted(labels, key=lambda label: counts[label] - quotas[label])
    for label in by_remainder[: max(left, 0)]:
        counts[label] += 1
    for label in labels:
        counts[label] = min(max(counts[label], 1), len(by_label[label]) - 1)

    rng = np.random.default_rng(seed)
    test_groups: set[tuple[str, int]] = set()
    for label in labels:
        groups = by_label[label]
        order = rng.permutation(len(groups))
        test_groups.update(groups[i] for i in order[: counts[label]])

    entries = tuple(
        replace(e, split=Split.test if e.group in test_groups else Split.train)
        for e in manifest.entries
    )
    logger.debug("Split %d groups, %d to test", len(group_label), len(test_groups))
    return replace(manifest, entries=entries)


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Partition ``range(n)`` into ``k`` shuffled folds.

    With ``n = q * k + r`` the first ``r`` folds hold ``q + 1`` indices and the
    rest ``q``. Each fold is returned sorted.

    Raises:
        DatasetError: k < 2 or n < k
    """
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    if n < k:
        raise DatasetError(f"Cannot make {k} folds from {n} items")
    order = np.random.default_rng(seed).permutation(n)
    q, r = divmod(n, k)
    folds, start = [], 0
    for fold in range(k):
        size = q + 1 if fold < r else q
        folds.append(np.sort(order[start : start + size]))
        start += size
    return folds


def stratified_folds(labels: list[Label], k: int, seed: int) -> list[np.ndarray]:
    """Partition item indices into ``k`` folds with balanced classes.

    Uses scikit-learn's shuffled ``StratifiedKFold``, so every fold holds
    each class in proportion and fold sizes differ by at most one.

    Raises:
        DatasetError: k < 2, fewer items than folds, or no class with at
            least ``k`` items
    """
    n = len(labels)
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    if n < k:
        raise DatasetError(f"Cannot make {k} folds from {n} items")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed % 2**32)
    y = np.array([label.index for label in labels])
    try:
        return [np.sort(test) for _, test in splitter.split(np.zeros(n), y)]
    except ValueError as exc:
        raise DatasetError(f"Cannot stratify {n} items into {k} folds: {exc}")


def augment_manifest(manifest: Manifest, multiplier: int) -> Manifest:
    """Expand every clip into ``multiplier`` augmentation variants.

    Raises:
        DatasetError: multiplier < 1
    """
    if multiplier < 1:
        raise DatasetError(f"multiplier must be >= 1, got {multiplier}")
    entries = tuple(
        replace(entry, variant=variant)
        for entry in manifest.entries
        if entry.variant == 0
        for variant in range(multiplier)
    )
    return replace(manifest, entries=entries, multiplier=multiplier)


@dataclass(frozen=True)
class SynthClip:
    """A rendered synthetic clip and the trajectory of its moving patch."""

    frames: list[Frame]
    label: Label
    kind: str
    centers: list[tuple[float, float]]
    sigma: float
    period: int | None = None


def synth_clip(
    kind: str,
    T: int,  # noqa: N803
    width: int,
    height: int,
    seed: int,
    channels: int = 1,
    noise: float = 0.02,
) -> SynthClip:
    """Render a synthetic clip.

    The scene is a fixed textured background with a soft patch near the
    frame center, standing in for the head of an animal in a cropped view.
    ``periodic`` bobs the patch up and down with a period of 4 to 8 frames
    (1 to 2 s) and is labeled Ruminating. ``drift`` walks the patch across
    the frame horizontally at constant speed, edge to edge over the ``T``
    frames; ``static`` keeps it still. Both are labeled Other. Every frame
    gets independent Gaussian pixel noise.

    Raises:
        DatasetError: unknown kind, T < 2 or frame smaller than 4x4
    """
    if T < 2:
        raise DatasetError(f"T must be >= 2, got {T}")
    if width < 4 or height < 4:
        raise DatasetError(
            f"Synthetic frames must be at least 4x4, got {width}x{height}"
        )
    if channels not in (1, 3):
        raise DatasetError(f"channels must be 1 or 3, got {channels}")

    rng = np.random.default_rng(seed)
    size = min(width, height)
    background = 0.25 + 0.1 * rng.random((height, width))
    sigma = max(1.0, size / 12.0)
    jitter = size / 16.0
    cx = (width - 1) / 2.0 + rng.uniform(-jitter, jitter)
    cy = (height - 1) / 2.0 + rng.uniform(-jitter, jitter)
    period = None

    match kind:
        case "periodic":
            label = Label.ruminating
            period = int(rng.integers(4, 9))
            amplitude = max(1.0, size / 5.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            centers = [
                (cx, cy + amplitude * math.sin(2.0 * math.pi * t / period + phase))
                for t in range(T)
            ]
        case "drift":
            label = Label.other
            margin = min(2.0 * sigma, (width - 1) / 2.0)
            start, end = margin, width - 1 - margin
            if rng.random() < 0.5:
                start, end = end, start
            centers = [(start + (end - start) * t / (T - 1), cy) for t in range(T)]
        case "static":
            label = Label.other
            centers = [(cx, cy)] * T
        case _:
            raise DatasetError(f"Unknown synthetic kind {kind!r}")

    tint = np.array([1.0, 0.85, 0.7][:channels])
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    frames = []
    for x, y in centers:
        blob = 0.6 * np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2.0 * sigma**2))
        gray = background + blob
        if noise > 0:
            gray = gray + rng.normal(0.0, noise, size=gray.shape)
        pixels = np.clip(gray, 0.0, 1.0)[:, :, np.newaxis] * tint
        frames.append(Frame(pixels))
    return SynthClip(
        frames=frames,
        label=label,
        kind=kind,
        centers=centers,
        sigma=sigma,
        period=period,
    )


def path_mask(clip: SynthClip, width: int, height: int) -> np.ndarray:
    """Return the ``(height, width)`` mask of pixels near the patch path.

    A pixel is on the path if it lies within 2 sigma of some patch center.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    mask = np.zeros((height, width), dtype=bool)
    for x, y in clip.centers:
        mask |= (xx - x) ** 2 + (yy - y) ** 2 <= (2.0 * clip.sigma) ** 2
    return mask


def frame_name(index: int, suffix: str = ".png") -> str:
    """Return the file name of the frame at zero-based ``index``."""
    return f"{index + 1:06d}{suffix}"


def write_clip_frames(
    frames: list[Frame], frames_dir: Path, source_id: str, suffix: str = ".png"
) -> Path:
    """Write ``frames`` as ``frames_dir/source_id/000001.png``, ...

    Raises:
        DatasetError: the directory cannot be written
    """
    source_dir = frames_dir / source_id
    try:
        source_dir.mkdir(parents=True, exist_ok=True)
        for index, frame in enumerate(frames):
            write_frame(frame, source_dir / frame_name(index, suffix))
    except OSError as exc:
        raise DatasetError(f"Cannot write frames to {source_dir}: {exc}")
    return source_dir


def list_frames(source_dir: Path) -> list[Path]:
    """Return the frame files of a source in frame order."""
    return sorted(
        path for path in source_dir.iterdir() if path.suffix.lower() in FRAME_SUFFIXES
    )


def read_clip_frames(frames_dir: Path, clip: LabeledClip) -> list[Frame]:
    """Read the ``T`` frames of ``clip``.

    Raises:
        DatasetError: the source directory is missing
        ClipTooShortError: the source ends before the clip does
    """
    source_dir = frames_dir / clip.source_id
    if not source_dir.is_dir():
        raise DatasetError(f"Missing frames for entry {clip.key}: {source_dir}")
    paths = list_frames(source_dir)
    if len(paths) < clip.start + clip.T:
        raise ClipTooShortError(
            f"Entry {clip.key} needs frames {clip.start}..{clip.start + clip.T - 1}, "
            f"source has {len(paths)}"
        )
    return [read_frame(path) for path in paths[clip.start : clip.start + clip.T]]


def write_manifest(manifest: Manifest, path: Path) -> None:
    """Write one JSON object per clip to ``path``."""
    lines = [
        orjson.dumps(entry.to_record(), option=orjson.OPT_SORT_KEYS)
        for entry in manifest.entries
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(line + b"\n" for line in lines))


def read_manifest(path: Path, T: int | None = None) -> Manifest:  # noqa: N803
    """Read a manifest written by ``write_manifest``.

    Args:
        path: JSONL file
        T: expected window length; required to read an empty manifest

    Raises:
        DatasetError: unreadable file or invalid record
        ConfigError: the entries disagree with ``T``
    """
    try:
        lines = path.read_bytes().splitlines()
    except OSError as exc:
        raise DatasetError(f"Cannot read manifest {path}: {exc}")
    entries = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entries.append(LabeledClip.from_record(orjson.loads(line)))
        except (orjson.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetError(f"Invalid manifest record at {path}:{number}: {exc}")
    if T is not None and entries and entries[0].T != T:
        raise ConfigError(f"Manifest {path} has T={entries[0].T}, expected T={T}")
    if T is None:
        if not entries:
            raise DatasetError(f"Manifest {path} is empty and no T was given")
        T = entries[0].T  # noqa: N806
    multiplier = max((e.variant for e in entries), default=0) + 1
    try:
        return Manifest(T=T, entries=tuple(entries), multiplier=multiplier)
    except ValueError as exc:
        raise DatasetError(f"Manifest {path}: {exc}")


_KINDS = ("periodic", "drift", "static")


def synth_dataset(
    cfg: DatasetConfig, frames_dir: Path, seed: int, workers: int = 1
) -> Manifest:
    """Render the configured synthetic sources and window them into clips.

    Every source holds ``cfg.source_frames`` frames and depends only on
    ``(seed, kind, index)``, so runs that differ in ``T`` or stride cut the
    same footage. Sources are rendered concurrently and cut with ``window``.

    Returns:
        Unsplit, unaugmented manifest ordered by kind, source and start

    Raises:
        DatasetError: frames cannot be written
    """
    counts = {
        "periodic": cfg.periodic_sources,
        "drift": cfg.drift_sources,
        "static": cfg.static_sources,
    }
    jobs = [(kind, index) for kind in _KINDS for index in range(counts[kind])]
    ranges = window(cfg.source_frames, cfg.T, cfg.effective_stride)
    if jobs and not ranges:
        logger.warning(
            "Sources of %d frames hold no clip of T=%d", cfg.source_frames, cfg.T
        )

    def render(job: tuple[str, int]) -> list[LabeledClip]:
        kind, index = job
        source_id = f"{kind}_{index:04d}"
        clip = synth_clip(
            kind,
            cfg.source_frames,
            cfg.width,
            cfg.height,
            derive_seed(seed, _KINDS.index(kind), index),
            channels=cfg.channels,
            noise=cfg.noise,
        )
        write_clip_frames(clip.frames, frames_dir, source_id)
        return [
            LabeledClip(source_id=source_id, start=start, T=cfg.T, label=clip.label)
            for start, _ in ranges
        ]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        entries = [e for source in executor.map(render, jobs) for e in source]
    logger.info(
        "Rendered %d synthetic sources into %s, %d clips of T=%d",
        len(jobs),
        frames_dir,
        len(entries),
        cfg.T,
    )
    return Manifest(T=cfg.T, entries=tuple(entries))
