"""Screen-capture extraction: a simulated phone-camera channel, perspective
rectification, and ECC-protected payload recovery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec
from .checkpoint import ModelCheckpoint
from .errors import ConfigError, DecodeError
from .geometry import estimate_homography, warp
from .imageio import COVER_SIZE
from .jpeg import jpeg_simulate
from .rs import payload_bits, rs_decode, rs_encode


@dataclass
class CaptureSpec:
    """Parameters of the simulated capture channel.

    ``displacement`` is the maximum per-coordinate corner jitter as a fraction
    of the marked-image side.  ``jpeg_quality`` is an inclusive range; ``None``
    disables compression.
    """

    displacement: float = 0.06
    brightness: float = 0.03
    contrast: tuple = (0.95, 1.05)
    noise_std: float = 0.004
    jpeg_quality: tuple | None = (85, 95)
    canvas: int = 192
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.displacement < 0.25:
            raise ConfigError(f"displacement must be in [0, 0.25), got {self.displacement}")
        if self.brightness < 0 or self.noise_std < 0:
            raise ConfigError("brightness and noise_std must be non-negative")
        lo, hi = self.contrast
        if not 0 < lo <= hi:
            raise ConfigError(f"contrast range must satisfy 0 < lo <= hi, got {self.contrast}")
        if self.jpeg_quality is not None:
            qlo, qhi = self.jpeg_quality
            if not 1 <= qlo <= qhi <= 100:
                raise ConfigError(f"jpeg quality range must lie in [1, 100], got {self.jpeg_quality}")
        if self.canvas < COVER_SIZE:
            raise ConfigError(f"canvas must be at least {COVER_SIZE}, got {self.canvas}")

    @classmethod
    def identity(cls, seed: int = 0) -> "CaptureSpec":
        return cls(displacement=0.0, brightness=0.0, contrast=(1.0, 1.0), noise_std=0.0,
                   jpeg_quality=None, seed=seed)


def image_corners(size: int = COVER_SIZE) -> np.ndarray:
    """Pixel-centre corners in order top-left, top-right, bottom-right, bottom-left."""
    s = size - 1
    return np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=np.float64)


def is_convex(quad: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        a, b, c = quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]
        u, v = b - a, c - b
        signs.append(u[0] * v[1] - u[1] * v[0])
    signs = np.array(signs)
    return bool(np.all(signs > 0) or np.all(signs < 0))


def simulate_capture(m: np.ndarray, spec: CaptureSpec | None = None):
    """Photograph a marked image: perspective placement on a larger canvas,
    brightness/contrast jitter, sensor noise and JPEG.

    Returns ``(photo, corners)`` where ``corners`` are the true positions of
    the marked image's corners in the photo.
    """
    spec = spec or CaptureSpec()
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = m.shape[0]
    src = image_corners(size)
    offset = (spec.canvas - size) / 2.0
    base = src + offset
    for _ in range(100):
        jitter = rng.uniform(-1, 1, size=(4, 2)) * spec.displacement * size
        dst = base + jitter
        if is_convex(dst):
            break
    else:  # pragma: no cover - convexity holds for displacement < 0.25
        dst = base
    H = estimate_homography(src, dst)
    photo = warp(m, H, (spec.canvas, spec.canvas))

    contrast = rng.uniform(*spec.contrast)
    bright = rng.uniform(-spec.brightness, spec.brightness)
    photo = (photo - 0.5) * contrast + 0.5 + bright
    if spec.noise_std:
        photo = photo + rng.normal(0.0, spec.noise_std, size=photo.shape)
    photo = np.clip(photo, 0.0, 1.0)
    if spec.jpeg_quality is not None:
        q = int(rng.integers(spec.jpeg_quality[0], spec.jpeg_quality[1] + 1))
        photo = jpeg_simulate(photo, q)
    return codec.quantize8(photo), dst


def rectify(photo: np.ndarray, corners, size: int = COVER_SIZE) -> np.ndarray:
    """Map the quad ``corners`` (TL, TR, BR, BL) of ``photo`` onto a ``size x size`` square."""
    H = estimate_homography(np.asarray(corners, dtype=np.float64), image_corners(size))
    return np.clip(warp(photo, H, (size, size)), 0.0, 1.0)


@dataclass
class ScanResult:
    payload: bytes | None
    grid: np.ndarray
    raw_ber: float | None = None
    rectified: np.ndarray | None = field(default=None, repr=False)


def scan_extract(photo: np.ndarray, corners, ckpt: ModelCheckpoint,
                 expected_grid: np.ndarray | None = None) -> ScanResult:
    """Rectify, run the extractor, binarise at 0.5 and RS-decode.

    ``expected_grid`` only feeds the raw-BER diagnostic.  Decoding failures
    raise :class:`DecodeError` carrying ``raw_ber`` and the extracted ``grid``.
    """
    rect = rectify(photo, corners)
    grid = codec.extract_bits(ckpt, rect)
    raw = None
    if expected_grid is not None:
        raw = float(np.mean(grid.astype(bool) != np.asarray(expected_grid).astype(bool)))
    try:
        payload = rs_decode(grid)
    except DecodeError as exc:
        exc.raw_ber = raw
        exc.grid = grid
        raise
    return ScanResult(payload=payload, grid=grid, raw_ber=raw, rectified=rect)


@dataclass
class TrialReport:
    seed: int
    success: bool
    raw_ber: float
    psnr_marked: float
    psnr_rectified: float
    error: str = ""
    photo: np.ndarray | None = field(default=None, repr=False)
    corners: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {"seed": self.seed, "success": self.success, "raw_ber": self.raw_ber,
                "psnr_marked": self.psnr_marked, "psnr_rectified": self.psnr_rectified, "error": self.error}


def scan_trial(ckpt: ModelCheckpoint, payload: bytes, cover: np.ndarray,
               spec: CaptureSpec) -> TrialReport:
    """One end-to-end run: encode, embed, store as 8-bit, capture, scan."""
    from .training import psnr

    grid = rs_encode(payload)
    marked = codec.quantize8(codec.embed(ckpt, grid, cover))
    photo, corners = simulate_capture(marked, spec)
    try:
        res = scan_extract(photo, corners, ckpt, expected_grid=grid)
    except DecodeError as exc:
        rect = rectify(photo, corners)
        return TrialReport(spec.seed, False, exc.raw_ber, psnr(cover, marked), psnr(marked, rect), str(exc),
                           photo, corners)
    ok = res.payload == bytes(payload)
    return TrialReport(spec.seed, ok, res.raw_ber, psnr(cover, marked), psnr(marked, res.rectified),
                       "" if ok else "decoded payload differs", photo, corners)


__all__ = ["CaptureSpec", "ScanResult", "TrialReport", "image_corners", "rectify", "scan_extract",
           "scan_trial", "simulate_capture", "payload_bits", "rs_encode", "rs_decode"]
