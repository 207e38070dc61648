"""Image and watermark file I/O.

Images are float arrays in [0, 1], channels-last.  PNG and binary PPM/PGM are
read and written through Pillow.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageReadError, ShapeError

COVER_SIZE = 128
WATERMARK_SIZE = 32
LUMA = np.array([0.299, 0.587, 0.114])


def read_image(path) -> np.ndarray:
    """Return an RGB float64 array in [0, 1] (grayscale files are replicated)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = np.repeat(arr[..., None], 3, axis=2)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise ImageReadError(path, "no such file") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageReadError(path, str(exc)) from None
    return arr


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write an 8-bit image; format follows the suffix (.png, .ppm, .pgm)."""
    path = Path(path)
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if path.suffix.lower() == ".pgm" and arr.ndim == 3:
        arr = to_uint8(np.asarray(img) @ LUMA)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping (no antialiasing)."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        out = img.copy()
        return out[..., 0] if squeeze else out

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[..., 0] if squeeze else out


def load_cover(path, size: int = COVER_SIZE) -> np.ndarray:
    """Read an RGB cover image and resample it to ``size x size``."""
    return resize_bilinear(read_image(path), size, size)


def binarize(x, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(x) >= threshold).astype(np.uint8)


def watermark_from_image(path, size: int = WATERMARK_SIZE) -> np.ndarray:
    """Grayscale, resize and threshold an image into a ``size x size`` bit grid."""
    gray = read_image(path) @ LUMA
    return binarize(resize_bilinear(gray, size, size))


def random_watermark(seed, size: int = WATERMARK_SIZE) -> np.ndarray:
    """I.i.d. fair bits from a seed (an int or a ``numpy.random.Generator``)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.integers(0, 2, size=(size, size), dtype=np.uint8)


def load_watermark(source, size: int = WATERMARK_SIZE) -> np.ndarray:
    """Watermark grid from an image path, a bit-text file, or ``random:<seed>``."""
    if isinstance(source, (int, np.integer, np.random.Generator)):
        return random_watermark(source, size)
    text = str(source)
    if text.startswith("random:"):
        try:
            seed = int(text.split(":", 1)[1])
        except ValueError:
            raise ImageReadError(text, "random watermark seed must be an integer") from None
        return random_watermark(seed, size)
    path = Path(text)
    if path.suffix.lower() in (".txt", ".bits"):
        return read_bits(path, size)
    return watermark_from_image(path, size)


def write_bits(path, bits: np.ndarray) -> None:
    """One row of 0/1 characters per line."""
    bits = np.asarray(bits).reshape(-1, np.asarray(bits).shape[-1] if np.ndim(bits) > 1 else 32)
    lines = ["".join("1" if b else "0" for b in row) for row in bits]
    Path(path).write_text("\n".join(lines) + "\n")


def read_bits(path, size: int = WATERMARK_SIZE) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ImageReadError(path, exc.strerror or str(exc)) from None
    chars = [ch for ch in text if ch in "01"]
    if len(chars) != size * size:
        raise ShapeError(f"{path}: expected {size * size} bits, found {len(chars)}")
    return np.array([int(ch) for ch in chars], dtype=np.uint8).reshape(size, size)
