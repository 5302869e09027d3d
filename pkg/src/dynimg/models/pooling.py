"""Represents the inputs and outputs of rank pooling."""
from dataclasses import dataclass, field

import numpy as np

from dynimg.models.frame import Frame


@dataclass(frozen=True, eq=False)
class FeatureSeq:
    """Per-frame features and their running means.

    Both arrays have shape ``(T, dim)``. Row ``t`` of ``smoothed`` is the mean
    of feature rows ``0..t`` unless smoothing was disabled, in which case it
    equals ``features``. ``shape`` is the ``(height, width, channels)`` of the
    source frames, so a pooled vector can be viewed as an image.
    """

    features: np.ndarray
    smoothed: np.ndarray
    shape: tuple[int, int, int] | None = None

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        smoothed = np.array(self.smoothed, dtype=np.float64)
        if features.ndim != 2 or features.shape != smoothed.shape:
            raise ValueError(
                f"features {features.shape} and smoothed {smoothed.shape} "
                "must both be (T, dim)"
            )
        if features.shape[0] < 1:
            raise ValueError("FeatureSeq needs at least one frame")
        shape = self.shape or (1, features.shape[1], 1)
        if int(np.prod(shape)) != features.shape[1]:
            raise ValueError(f"shape {shape} does not match dim {features.shape[1]}")
        features.setflags(write=False)
        smoothed.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "smoothed", smoothed)
        object.__setattr__(self, "shape", tuple(shape))

    @property
    def T(self) -> int:  # noqa: N802
        """Number of frames."""
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        """Feature dimensionality."""
        return self.features.shape[1]

    @classmethod
    def from_smoothed(
        cls, smoothed: np.ndarray, shape: tuple[int, int, int] | None = None
    ) -> "FeatureSeq":
        """Build a sequence whose running means are ``smoothed``.

        The features are recovered by inverting the running mean:
        ``features[i] = (i + 1) * smoothed[i] - i * smoothed[i - 1]``.
        """
        smoothed = np.asarray(smoothed, dtype=np.float64)
        if smoothed.ndim == 1:
            smoothed = smoothed[:, np.newaxis]
        t = np.arange(1, smoothed.shape[0] + 1, dtype=np.float64)[:, np.newaxis]
        totals = t * smoothed
        features = np.diff(totals, axis=0, prepend=0.0)
        return cls(features=features, smoothed=smoothed, shape=shape)


@dataclass(frozen=True, eq=False)
class DynamicImage:
    """A pooled parameter vector ``d`` and its display mapping.

    ``norm_min`` and ``norm_max`` record the affine map taking ``d`` into
    ``[0, 1]``; they are equal only when ``d`` is constant, which maps to a
    uniform 0.5 image. ``energy`` and ``iterations`` are set by the exact
    solver.
    """

    d: np.ndarray
    width: int
    height: int
    channels: int
    norm_min: float
    norm_max: float
    energy: float | None = None
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def pixels(self) -> np.ndarray:
        """Return ``d`` rescaled to ``[0, 1]`` with shape ``(H, W, C)``."""
        span = self.norm_max - self.norm_min
        if span > 0:
            flat = np.clip((self.d - self.norm_min) / span, 0.0, 1.0)
        else:
            flat = np.full_like(self.d, 0.5)
        return flat.reshape(self.height, self.width, self.channels)

    def to_frame(self) -> Frame:
        """Return the display image as a Frame."""
        return Frame(self.pixels)
