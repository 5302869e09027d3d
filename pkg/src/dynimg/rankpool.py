"""Rank pooling of frame sequences into dynamic images.

A clip of ``T`` frames is summarized by the vector ``d`` minimizing::

    E(d) = lam/2 * |d|^2 + 2/(T(T-1)) * sum_{j>i} max(0, 1 - <d, m[j]> + <d, m[i]>)

where ``m[i]`` is the running mean of the first ``i + 1`` frame feature
vectors. ``solve_rank_pool`` minimizes it by subgradient descent;
``approx_rank_pool`` takes the first descent direction from ``d = 0`` as a
closed-form approximation.

Example::

    from dynimg.rankpool import build_feature_seq, solve_rank_pool

    seq = build_feature_seq(frames)
    image = solve_rank_pool(seq, RankPoolConfig())
    image.to_frame()  # display form in [0, 1]
"""
import logging
import math
from dataclasses import replace

import numpy as np

from dynimg.models import DynamicImage, FeatureSeq, Frame, RankPoolConfig

logger = logging.getLogger(__name__)


class RankPoolError(Exception):
    """Exception for invalid pooling inputs or numeric failure."""

    pass


class DegenerateClipError(RankPoolError):
    """Exception for clips too short to contain a frame pair."""

    pass


def build_feature_seq(
    clip: list[Frame], feature_map: str = "identity", smooth: bool = True
) -> FeatureSeq:
    """Turn a clip into per-frame features and their running means.

    Args:
        clip: ordered frames of equal shape
        feature_map: only ``"identity"`` (flattened normalized pixels)
        smooth: compute running means; if False ``smoothed`` repeats the
            raw features

    Raises:
        RankPoolError: empty clip, unknown feature map or frame shape mismatch
    """
    if feature_map != "identity":
        raise RankPoolError(f"Unknown feature map {feature_map!r}")
    if not clip:
        raise RankPoolError("Clip has no frames")
    shape = clip[0].shape
    for index, frame in enumerate(clip):
        if frame.shape != shape:
            raise RankPoolError(
                f"Frame {index} has shape {frame.shape}, expected {shape}"
            )
    features = np.stack([frame.flatten() for frame in clip])
    if not smooth:
        return FeatureSeq(features=features, smoothed=features, shape=shape)

    # incremental mean keeps m[i] bit-identical across repeated frames
    smoothed = np.empty_like(features)
    smoothed[0] = features[0]
    for t in range(1, len(features)):
        smoothed[t] = smoothed[t - 1] + (features[t] - smoothed[t - 1]) / (t + 1)
    return FeatureSeq(features=features, smoothed=smoothed, shape=shape)


def ranking_score(d: np.ndarray, v: np.ndarray) -> float:
    """Return the ranking score ``<d, v>``.

    Raises:
        RankPoolError: length mismatch
    """
    d = np.asarray(d, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if d.shape != v.shape:
        raise RankPoolError(f"Length mismatch: d {d.shape} vs v {v.shape}")
    return float(np.dot(d, v))


def _check_pairs(seq: FeatureSeq) -> None:
    if seq.T < 2:
        raise DegenerateClipError(f"Need at least 2 frames to rank, got T={seq.T}")


def _check_dim(d: np.ndarray, seq: FeatureSeq) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (seq.dim,):
        raise RankPoolError(f"d has shape {d.shape}, expected ({seq.dim},)")
    return d


def _margins(
    d: np.ndarray, seq: FeatureSeq
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # hinge arguments 1 - score(j) + score(i) for every pair i < j
    scores = seq.smoothed @ d
    earlier, later = np.triu_indices(seq.T, k=1)
    return 1.0 - scores[later] + scores[earlier], earlier, later


def hinge_energy(d: np.ndarray, seq: FeatureSeq, lam: float) -> float:
    """Evaluate the rank pooling energy at ``d``.

    Raises:
        DegenerateClipError: fewer than two frames
        RankPoolError: ``d`` does not match the feature dimension
    """
    _check_pairs(seq)
    d = _check_dim(d, seq)
    margins, _, _ = _margins(d, seq)
    hinge = np.maximum(margins, 0.0).sum()
    T = seq.T  # noqa: N806
    return float(0.5 * lam * np.dot(d, d) + 2.0 * hinge / (T * (T - 1)))


def _pair_coefficients(seq: FeatureSeq, active: np.ndarray) -> np.ndarray:
    # each active pair (i, j) contributes m[i] - m[j]
    earlier, later = np.triu_indices(seq.T, k=1)
    return np.bincount(earlier[active], minlength=seq.T) - np.bincount(
        later[active], minlength=seq.T
    )


def energy_subgradient(d: np.ndarray, seq: FeatureSeq, lam: float) -> np.ndarray:
    """Return a subgradient of the energy at ``d``.

    Pairs whose hinge argument is exactly zero contribute nothing.

    Raises:
        DegenerateClipError: fewer than two frames
        RankPoolError: ``d`` does not match the feature dimension
    """
    _check_pairs(seq)
    d = _check_dim(d, seq)
    margins, _, _ = _margins(d, seq)
    coefficients = _pair_coefficients(seq, margins > 0)
    T = seq.T  # noqa: N806
    return lam * d + (2.0 / (T * (T - 1))) * (coefficients @ seq.smoothed)


def to_dynamic_image(
    d: np.ndarray, width: int, height: int, channels: int
) -> DynamicImage:
    """Wrap ``d`` with the min-max mapping that displays it in ``[0, 1]``.

    Raises:
        RankPoolError: ``d`` does not have ``width * height * channels`` values
    """
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if d.size != width * height * channels:
        raise RankPoolError(
            f"d has {d.size} values, image {width}x{height}x{channels} "
            f"needs {width * height * channels}"
        )
    return DynamicImage(
        d=d,
        width=width,
        height=height,
        channels=channels,
        norm_min=float(d.min()),
        norm_max=float(d.max()),
    )


def _image_for(seq: FeatureSeq, d: np.ndarray) -> DynamicImage:
    height, width, channels = seq.shape  # type: ignore[misc]
    return to_dynamic_image(d, width, height, channels)


def _is_static(seq: FeatureSeq) -> bool:
    return bool(np.all(seq.smoothed == seq.smoothed[0]))


def solve_rank_pool(seq: FeatureSeq, cfg: RankPoolConfig) -> DynamicImage:
    """Minimize the energy by subgradient descent from ``d = 0``.

    The step at iteration ``k`` is ``cfg.step_size / sqrt(k)``. Every
    ``cfg.sweep`` iterations the run stops if the best energy improved by
    less than ``cfg.tol``. The best iterate is returned, so its energy never
    exceeds ``E(0) = 1``.

    Raises:
        DegenerateClipError: fewer than two frames
        RankPoolError: energy became non-finite
    """
    _check_pairs(seq)
    d = np.zeros(seq.dim)
    best_d, best_energy = d, hinge_energy(d, seq, cfg.lam)
    if _is_static(seq):
        logger.debug("Static clip, no ranking signal")
        return replace(_image_for(seq, best_d), energy=best_energy, iterations=0)

    sweep_start = best_energy
    iterations = 0
    for k in range(1, cfg.max_iters + 1):
        iterations = k
        grad = energy_subgradient(d, seq, cfg.lam)
        if not np.any(grad):
            break
        d = d - (cfg.step_size / math.sqrt(k)) * grad
        energy = hinge_energy(d, seq, cfg.lam)
        if not math.isfinite(energy):
            raise RankPoolError(f"Energy became non-finite at iteration {k}")
        if energy < best_energy:
            best_d, best_energy = d, energy
        if k % cfg.sweep == 0:
            if sweep_start - best_energy < cfg.tol:
                break
            sweep_start = best_energy

    logger.debug("Solver stopped after %d iterations, E=%.6g", iterations, best_energy)
    return replace(_image_for(seq, best_d), energy=best_energy, iterations=iterations)


def approx_rank_pool(seq: FeatureSeq) -> DynamicImage:
    """Return the unit-norm combination ``sum_t (2t - T - 1) m[t - 1]``.

    This is the negative subgradient at ``d = 0``, where every pair is
    active. A static clip gives the zero vector, shown as mid-gray.

    Raises:
        DegenerateClipError: fewer than two frames
    """
    _check_pairs(seq)
    if _is_static(seq):
        return _image_for(seq, np.zeros(seq.dim))
    T = seq.T  # noqa: N806
    coefficients = 2.0 * np.arange(1, T + 1) - T - 1
    d = coefficients @ seq.smoothed
    norm = np.linalg.norm(d)
    if norm > 0:
        d = d / norm
    return _image_for(seq, d)


def pool_frames(frames: list[Frame], cfg: RankPoolConfig) -> DynamicImage:
    """Build the feature sequence of ``frames`` and pool it with ``cfg.solver``.

    Raises:
        DegenerateClipError: fewer than two frames
        RankPoolError: shape mismatch or numeric failure
    """
    seq = build_feature_seq(frames, smooth=cfg.smooth)
    match cfg.solver:
        case "exact":
            return solve_rank_pool(seq, cfg)
        case "approx":
            return approx_rank_pool(seq)
        case _:
            raise RankPoolError(f"Unknown solver {cfg.solver!r}")
