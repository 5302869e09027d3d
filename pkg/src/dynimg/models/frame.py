"""Represents decoded frames and the crop rectangle applied to them."""
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ImageFormat(str, Enum):
    """Supported 8-bit file formats."""

    PNG = "PNG"
    PGM = "PGM"
    PPM = "PPM"

    @classmethod
    def from_suffix(cls, suffix: str) -> "ImageFormat":
        """Return the format matching a file suffix such as ``.png``.

        Raises:
            ValueError: unknown suffix
        """
        try:
            return cls[suffix.lstrip(".").upper()]
        except KeyError:
            raise ValueError(f"Unsupported image suffix {suffix!r}")


@dataclass(frozen=True, eq=False)
class Frame:
    """A decoded image with normalized pixels.

    ``pixels`` has shape ``(height, width, channels)``; flattening it in C
    order gives the row-major scalar layout. The array is made read-only so
    transforms can never mutate their input.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, np.newaxis]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise ValueError(f"Frame pixels must be (H, W, 1|3), got {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"Frame must be at least 1x1, got {pixels.shape}")
        if not np.all((pixels >= 0.0) & (pixels <= 1.0)):
            raise ValueError("Frame pixel values must lie in [0, 1]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        """Width in pixels."""
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        """Height in pixels."""
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        """Channel count, 1 or 3."""
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """Return ``(height, width, channels)``."""
        return self.pixels.shape  # type: ignore[return-value]

    def flatten(self) -> np.ndarray:
        """Return the row-major pixel vector."""
        return self.pixels.reshape(-1)

    def full_rect(self) -> "CropRect":
        """Return the rectangle covering the whole frame."""
        return CropRect(x=0, y=0, w=self.width, h=self.height)


@dataclass(frozen=True)
class CropRect:
    """Pixel rectangle ``(x, y, w, h)`` selecting part of a frame."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError(f"Crop extents must be >= 1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"Crop offsets must be >= 0, got ({self.x}, {self.y})")

    def fits(self, width: int, height: int) -> bool:
        """Return True if the rectangle lies inside a ``width`` x ``height`` frame."""
        return self.x + self.w <= width and self.y + self.h <= height

    def compose(self, inner: "CropRect") -> "CropRect":
        """Return the rectangle equivalent to cropping ``self`` then ``inner``."""
        return CropRect(x=self.x + inner.x, y=self.y + inner.y, w=inner.w, h=inner.h)

    def to_list(self) -> list[int]:
        """Return ``[x, y, w, h]`` as stored in manifests."""
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values: list[int]) -> "CropRect":
        """Build from ``[x, y, w, h]``."""
        x, y, w, h = (int(v) for v in values)
        return cls(x=x, y=y, w=w, h=h)
