"""Grayscale images: 8-bit binary PGM files, bicubic resizing, PSNR and synthetic test images."""
from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from pathlib import Path

import numpy as np

from road_dl.errors import DimensionMismatchError, FormatError
from road_dl.linalg import Mat, as_mat

log = logging.getLogger(__name__)

PGM_MAGIC = b"P5"
MAX_PGM_VALUE = 255
# Keys cubic convolution parameter.
BICUBIC_A = -0.5


@dataclass
class GrayImage:
    """A grayscale image with pixel values nominally in [0, 1]; pixels[row, col]."""

    pixels: Mat = field(metadata={"description": "height x width array of intensities"})

    def __post_init__(self) -> None:
        """Validate the pixel array."""
        self.pixels = as_mat(self.pixels, name="image")

    @property
    def height(self) -> int:
        """Number of pixel rows."""
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        """Number of pixel columns."""
        return int(self.pixels.shape[1])

    def clamped(self) -> 'GrayImage':
        """Return a copy with pixels clipped to [0, 1]."""
        return GrayImage(np.clip(self.pixels, 0.0, 1.0))


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next whitespace-delimited header token, skipping ``#`` comments."""
    length = len(data)
    while pos < length:
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < length and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < length and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def decode_pgm(data: bytes, source: str = "<bytes>") -> GrayImage:
    """
    Decode a binary 8-bit PGM (P5) image.

    Raises
    ------
    FormatError
        If the magic, a header field or the pixel count is wrong, or the maximum value is not
        between 1 and 255.
    """
    magic, pos = _next_token(data, 0)
    if magic != PGM_MAGIC:
        raise FormatError(f"{source} is not a binary PGM (magic {magic!r}).")
    header = []
    for name in ("width", "height", "maximum value"):
        token, pos = _next_token(data, pos)
        try:
            header.append(int(token))
        except ValueError as exc:
            raise FormatError(f"{source} has a malformed {name} {token!r}.") from exc
    width, height, max_value = header
    if width < 1 or height < 1:
        raise FormatError(f"{source} has invalid dimensions {width}x{height}.")
    if not 1 <= max_value <= MAX_PGM_VALUE:
        raise FormatError(f"{source} has unsupported maximum value {max_value}; only 8-bit PGM is read.")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{source} holds {len(raster)} pixels, expected {width * height}.")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)
    return GrayImage(pixels / max_value)


def encode_pgm(img: GrayImage) -> bytes:
    """Encode an image as binary 8-bit PGM, clamping to [0, 1] and rounding half up."""
    levels = np.floor(np.clip(img.pixels, 0.0, 1.0) * MAX_PGM_VALUE + 0.5).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n{MAX_PGM_VALUE}\n".encode("ascii")
    return header + levels.tobytes(order="C")


def pgm_read(path: str | Path) -> GrayImage:
    """Read a binary 8-bit PGM file; pixels are scaled to [0, 1]."""
    path = Path(path)
    img = decode_pgm(path.read_bytes(), source=str(path))
    log.debug("Read %dx%d image from %s", img.width, img.height, path)
    return img


def pgm_write(img: GrayImage, path: str | Path) -> None:
    """Write an image as binary 8-bit PGM."""
    path = Path(path)
    path.write_bytes(encode_pgm(img))
    log.debug("Wrote %dx%d image to %s", img.width, img.height, path)


def cubic_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel with parameter ``a``."""
    x = np.abs(x)
    inner = (a + 2.0) * x ** 3 - (a + 3.0) * x ** 2 + 1.0
    outer = a * x ** 3 - 5.0 * a * x ** 2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, inner, np.where(x < 2.0, outer, 0.0))


def resize_weights(size_in: int, size_out: int) -> Mat:
    """
    Interpolation matrix of shape (size_out, size_in) along one axis.

    Pixel centres are aligned, each output sample mixes the four nearest inputs, and
    out-of-range taps are clamped to the edge pixel.
    """
    positions = (np.arange(size_out) + 0.5) * (size_in / size_out) - 0.5
    base = np.floor(positions).astype(np.int64)
    weights = np.zeros((size_out, size_in))
    rows = np.arange(size_out)
    for offset in (-1, 0, 1, 2):
        taps = base + offset
        np.add.at(weights, (rows, np.clip(taps, 0, size_in - 1)), cubic_kernel(positions - taps))
    return weights


def bicubic_resize(img: GrayImage, scale: float | None = None,
                   size: tuple[int, int] | None = None) -> GrayImage:
    """
    Resize an image by separable bicubic interpolation.

    Parameters
    ----------
    img : GrayImage
        Source image.
    scale : float, optional
        Positive factor; the output has ``ceil(scale * height)`` by ``ceil(scale * width)`` pixels.
    size : tuple[int, int], optional
        Explicit output (height, width); takes precedence over ``scale``.

    Returns
    -------
    GrayImage
        The resized image, not clamped.

    Raises
    ------
    ValueError
        If neither argument is given, the scale is not positive, or an output dimension is below 1.
    """
    if size is None:
        if scale is None or scale <= 0:
            raise ValueError("A positive scale or an explicit size is required.")
        size = (math.ceil(img.height * scale - 1e-9), math.ceil(img.width * scale - 1e-9))
    height, width = size
    if height < 1 or width < 1:
        raise ValueError(f"Resized image would be {height}x{width}.")
    if (height, width) == (img.height, img.width):
        return GrayImage(img.pixels.copy())
    row_weights = resize_weights(img.height, height)
    col_weights = resize_weights(img.width, width)
    return GrayImage(row_weights @ img.pixels @ col_weights.T)


def psnr(a: GrayImage, b: GrayImage) -> float:
    """
    Peak signal-to-noise ratio ``10 log10(Ne / ||a - b||_F^2)`` on [0, 1] pixels.

    Returns ``math.inf`` for identical images.
    """
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatchError(f"Images are {a.height}x{a.width} and {b.height}x{b.width}.")
    error = float(np.sum((a.pixels - b.pixels) ** 2))
    if error == 0.0:
        return math.inf
    return 10.0 * math.log10(a.pixels.size / error)


class ImageKind(Enum):
    """Families of synthetic test images."""

    BLOBS = "blobs"
    STRIPES = "stripes"
    CHECKER = "checker"


def synthetic_image(kind: ImageKind | str, size: int, seed: int = 0) -> GrayImage:
    """
    Deterministic smooth test image of ``size`` x ``size`` pixels in [0, 1].

    ``blobs`` sums random Gaussian bumps, ``stripes`` is a tilted sinusoid and ``checker``
    is a checkerboard with soft edges; position, frequency and orientation come from ``seed``.
    """
    kind = ImageKind(kind)
    if size < 1:
        raise ValueError("Image size must be positive.")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    if kind is ImageKind.BLOBS:
        pixels = np.zeros((size, size))
        for _ in range(6):
            centre = rng.random(2)
            width = 0.05 + 0.15 * rng.random()
            amplitude = 0.5 + 0.5 * rng.random()
            pixels += amplitude * np.exp(-((rows - centre[0]) ** 2 + (cols - centre[1]) ** 2) / (2 * width ** 2))
        pixels = pixels / pixels.max() if pixels.max() > 0 else pixels
    elif kind is ImageKind.STRIPES:
        angle = np.pi * rng.random()
        frequency = 3.0 + 4.0 * rng.random()
        phase = 2 * np.pi * rng.random()
        pixels = 0.5 + 0.4 * np.sin(2 * np.pi * frequency * (np.cos(angle) * cols + np.sin(angle) * rows) + phase)
    else:
        cells = 3 + int(rng.integers(0, 4))
        offset = rng.random(2)
        wave = np.sin(np.pi * cells * (rows + offset[0])) * np.sin(np.pi * cells * (cols + offset[1]))
        pixels = 0.5 + 0.4 * np.tanh(4.0 * wave)
    return GrayImage(pixels)
