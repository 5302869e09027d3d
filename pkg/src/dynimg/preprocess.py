"""Frame codec and the cleaning/augmentation transforms.

Example::

    from dynimg.preprocess import read_frame, crop, resize, gamma_correct

    frame = read_frame(Path("frames/cow01/000001.png"))
    frame = resize(crop(frame, CropRect(40, 0, 560, 480)), 224, 224)
    frame = gamma_correct(frame, 0.5)

Pixels are floats in ``[0, 1]``; 8-bit values only exist at file boundaries.
Every transform is a pure function returning a new Frame.
"""
import io
import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from dynimg.models import CropRect, Frame, ImageFormat, PreprocessConfig

logger = logging.getLogger(__name__)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_NETPBM_MAGIC = {ImageFormat.PGM: (b"P5", 1), ImageFormat.PPM: (b"P6", 3)}
_WHITESPACE = b" \t\r\n\x0b\x0c"


class PreprocessError(Exception):
    """Exception for invalid transform parameters or bounds."""

    pass


class FrameDecodeError(PreprocessError):
    """Exception for malformed or truncated image bytes."""

    def __init__(self, message: str, offset: int) -> None:
        """Build the error.

        Args:
            message: what went wrong
            offset: byte offset at which decoding failed
        """
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _NetpbmReader:
    """Reads the ASCII header tokens of a binary PGM/PPM file."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def __skip_space(self) -> None:
        while self.pos < len(self.data):
            byte = self.data[self.pos : self.pos + 1]
            if byte == b"#":
                # comments run to the end of the line
                while self.pos < len(self.data) and self.data[self.pos] not in b"\r\n":
                    self.pos += 1
            elif byte in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self, what: str) -> tuple[int, bytes]:
        self.__skip_space()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos] not in _WHITESPACE:
            if self.data[self.pos : self.pos + 1] == b"#":
                break
            self.pos += 1
        if self.pos == start:
            raise FrameDecodeError(f"Missing {what} in header", start)
        return start, self.data[start : self.pos]

    def integer(self, what: str) -> tuple[int, int]:
        start, tok = self.token(what)
        if not tok.isdigit():
            raise FrameDecodeError(f"Invalid {what} {tok!r} in header", start)
        return start, int(tok)


def _decode_netpbm(data: bytes, fmt: ImageFormat) -> Frame:
    magic, channels = _NETPBM_MAGIC[fmt]
    reader = _NetpbmReader(data)
    if data[:2] != magic:
        raise FrameDecodeError(f"Expected {fmt.value} magic {magic!r}", 0)
    reader.pos = 2
    _, width = reader.integer("width")
    _, height = reader.integer("height")
    maxval_at, maxval = reader.integer("maxval")
    if maxval != 255:
        raise FrameDecodeError(
            f"Only 8-bit maxval 255 is supported, got {maxval}", maxval_at
        )
    if width < 1 or height < 1:
        raise FrameDecodeError(f"Invalid dimensions {width}x{height}", 2)
    if reader.pos >= len(data) or data[reader.pos : reader.pos + 1] not in _WHITESPACE:
        raise FrameDecodeError("Missing whitespace after header", reader.pos)
    offset = reader.pos + 1
    expected = width * height * channels
    payload = data[offset : offset + expected]
    if len(payload) < expected:
        raise FrameDecodeError(
            f"Truncated payload: expected {expected} bytes, got {len(payload)}",
            offset + len(payload),
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Frame(raw / 255.0)


def _decode_png(data: bytes) -> Frame:
    if data[:8] != _PNG_SIGNATURE:
        raise FrameDecodeError("Missing PNG signature", 0)
    try:
        with Image.open(io.BytesIO(data)) as image:
            image.load()
            match image.mode:
                case "L":
                    raw = np.asarray(image, dtype=np.uint8)[:, :, np.newaxis]
                case "RGB":
                    raw = np.asarray(image, dtype=np.uint8)
                case _:
                    raise FrameDecodeError(
                        f"Unsupported PNG mode {image.mode!r}, expected L or RGB", 25
                    )
    except (OSError, SyntaxError, UnidentifiedImageError) as exc:
        # PIL does not expose where it stopped; report the end of the data read
        raise FrameDecodeError(f"Invalid PNG payload: {exc}", len(data))
    return Frame(raw / 255.0)


def decode_frame(data: bytes, fmt: ImageFormat) -> Frame:
    """Decode 8-bit image bytes into a normalized Frame.

    Args:
        data: encoded image
        fmt: PNG (gray or RGB), binary PGM (P5) or binary PPM (P6)

    Returns:
        Frame with pixel values ``byte / 255``

    Raises:
        FrameDecodeError: malformed header or truncated payload
    """
    match ImageFormat(fmt):
        case ImageFormat.PNG:
            return _decode_png(data)
        case ImageFormat.PGM | ImageFormat.PPM:
            return _decode_netpbm(data, ImageFormat(fmt))


def _to_bytes(frame: Frame) -> np.ndarray:
    return np.rint(frame.pixels * 255.0).astype(np.uint8)


def encode_frame(frame: Frame, fmt: ImageFormat) -> bytes:
    """Encode a Frame as 8-bit image bytes.

    Raises:
        PreprocessError: channel count does not fit the format
    """
    raw = _to_bytes(frame)
    match ImageFormat(fmt):
        case ImageFormat.PNG:
            mode = "L" if frame.channels == 1 else "RGB"
            image = Image.fromarray(raw[:, :, 0] if frame.channels == 1 else raw, mode)
            buffer = io.BytesIO()
            image.save(buffer, format="PNG")
            return buffer.getvalue()
        case ImageFormat.PGM | ImageFormat.PPM as netpbm:
            magic, channels = _NETPBM_MAGIC[netpbm]
            if frame.channels != channels:
                raise PreprocessError(
                    f"{netpbm.value} needs {channels} channel(s), frame has {frame.channels}"
                )
            header = magic + f"\n{frame.width} {frame.height}\n255\n".encode("ascii")
            return header + raw.tobytes()


def read_frame(path: Path) -> Frame:
    """Decode the image file at ``path``; the format follows the suffix.

    Raises:
        FrameDecodeError: file content is invalid
        ValueError: unknown suffix
    """
    fmt = ImageFormat.from_suffix(path.suffix)
    return decode_frame(path.read_bytes(), fmt)


def write_frame(frame: Frame, path: Path) -> None:
    """Encode ``frame`` to ``path``; the format follows the suffix."""
    path.write_bytes(encode_frame(frame, ImageFormat.from_suffix(path.suffix)))


def crop(frame: Frame, rect: CropRect) -> Frame:
    """Cut ``rect`` out of ``frame``.

    Output pixel ``(i, j)`` is input pixel ``(rect.x + i, rect.y + j)``.

    Raises:
        PreprocessError: rectangle exceeds the frame
    """
    if not rect.fits(frame.width, frame.height):
        raise PreprocessError(
            f"Crop {rect.to_list()} out of bounds for {frame.width}x{frame.height} frame"
        )
    return Frame(frame.pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w])


def _sample_positions(size: int, out_size: int) -> np.ndarray:
    # corner-aligned: first and last output samples hit the first and last pixels
    if out_size == 1:
        return np.array([(size - 1) / 2.0])
    return np.arange(out_size) * ((size - 1) / (out_size - 1))


def resize(
    frame: Frame, out_w: int, out_h: int, interpolation: str = "bilinear"
) -> Frame:
    """Resample ``frame`` to ``out_w`` x ``out_h``.

    Bilinear interpolation samples with aligned corners; ``"nearest"`` rounds
    the same sample positions instead.

    Raises:
        PreprocessError: non-positive output size or unknown interpolation
    """
    if out_w < 1 or out_h < 1:
        raise PreprocessError(f"Output size must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (frame.width, frame.height):
        return frame
    xs = _sample_positions(frame.width, out_w)
    ys = _sample_positions(frame.height, out_h)
    pixels = frame.pixels

    match interpolation:
        case "nearest":
            cols = np.rint(xs).astype(int)
            rows = np.rint(ys).astype(int)
            return Frame(pixels[rows][:, cols])
        case "bilinear":
            x0 = np.floor(xs).astype(int)
            y0 = np.floor(ys).astype(int)
            x1 = np.minimum(x0 + 1, frame.width - 1)
            y1 = np.minimum(y0 + 1, frame.height - 1)
            wx = (xs - x0)[np.newaxis, :, np.newaxis]
            wy = (ys - y0)[:, np.newaxis, np.newaxis]
            top = pixels[y0][:, x0] + (pixels[y0][:, x1] - pixels[y0][:, x0]) * wx
            bottom = pixels[y1][:, x0] + (pixels[y1][:, x1] - pixels[y1][:, x0]) * wx
            out = top + (bottom - top) * wy
            return Frame(np.clip(out, 0.0, 1.0))
        case _:
            raise PreprocessError(f"Unknown interpolation {interpolation!r}")


def adjust_brightness(frame: Frame, factor: float) -> Frame:
    """Scale every pixel by ``factor`` and clamp to ``[0, 1]``.

    Raises:
        PreprocessError: factor is not positive
    """
    if not factor > 0:
        raise PreprocessError(f"Brightness factor must be > 0, got {factor}")
    return Frame(np.clip(frame.pixels * factor, 0.0, 1.0))


def negative(frame: Frame) -> Frame:
    """Invert every pixel: ``p -> 1 - p``."""
    return Frame(1.0 - frame.pixels)


def gamma_correct(frame: Frame, gamma: float) -> Frame:
    """Apply ``p -> p ** gamma``; ``gamma < 1`` brightens.

    Raises:
        PreprocessError: gamma is not positive
    """
    if not gamma > 0:
        raise PreprocessError(f"Gamma must be > 0, got {gamma}")
    return Frame(np.power(frame.pixels, gamma))


def augment_frame(
    frame: Frame,
    variant: int,
    cfg: PreprocessConfig,
    rng: np.random.Generator | None = None,
) -> Frame:
    """Apply the brightness noise and the filters of augmentation ``variant``.

    ``variant % 4`` selects the filters: 0 none, 1 negative, 2 gamma,
    3 negative then gamma. Brightness noise needs ``rng`` and is skipped
    without one.
    """
    if cfg.brightness_noise and rng is not None:
        low, high = cfg.brightness_range
        frame = adjust_brightness(frame, float(rng.uniform(low, high)))
    match variant % 4:
        case 1:
            frame = negative(frame)
        case 2:
            frame = gamma_correct(frame, cfg.gamma)
        case 3:
            frame = gamma_correct(negative(frame), cfg.gamma)
    return frame


def preprocess_clip(
    frames: list[Frame],
    cfg: PreprocessConfig,
    rect: CropRect | None = None,
    variant: int = 0,
    seed: int | None = None,
) -> list[Frame]:
    """Crop, resize and augment every frame of a clip.

    With ``augment_order == "after_pool"`` only crop, resize and brightness
    noise happen here; the variant filters are applied to the pooled image.
    Brightness factors are drawn from ``seed``: one for the whole clip, or
    one per frame when ``cfg.brightness_scope`` is ``"frame"``.
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    filters = variant if cfg.augment_order == "before_pool" else 0
    factor = None
    if rng is not None and cfg.brightness_noise and cfg.brightness_scope == "clip":
        low, high = cfg.brightness_range
        factor, rng = float(rng.uniform(low, high)), None
    out: list[Frame] = []
    for frame in frames:
        if rect is not None:
            frame = crop(frame, rect)
        frame = resize(frame, cfg.resize_width, cfg.resize_height, cfg.interpolation)
        if factor is not None:
            frame = adjust_brightness(frame, factor)
        out.append(augment_frame(frame, filters, cfg, rng))
    logger.debug("Preprocessed %d frames (variant %d)", len(out), variant)
    return out
