"""Image-processing distortions for robustness testing, and BER sweeps over them.

Strength conventions:

==================  ==========  ==================================================
kind                domain      meaning
==================  ==========  ==================================================
gaussian_blur       [0, 1]      kernel sigma = 4 * s pixels, radius ceil(3 sigma),
                                zero padding (0 = no-op)
crop                [0, 1)      fraction of area discarded; kept region centred
                                (or randomly placed), rest zero-filled
additive_gaussian   [0, 1]      noise variance as a fraction of full range
                                (std = sqrt(v))
jpeg                [1, 100]    quality factor of the DCT round trip
random_replace      [0, 1]      fraction of pixels replaced by uniform noise
salt_pepper         [0, 1]      fraction of pixels forced to black or white
hist_equalize       ignored     per-channel 256-bin histogram equalisation
==================  ==========  ==================================================
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.ndimage import convolve1d

from . import codec
from .checkpoint import ModelCheckpoint
from .errors import AttackError
from .jpeg import jpeg_simulate

KINDS = ("gaussian_blur", "crop", "additive_gaussian", "jpeg", "random_replace",
         "salt_pepper", "hist_equalize")
_DOMAINS = {
    "gaussian_blur": (0.0, 1.0, True),
    "crop": (0.0, 1.0, False),
    "additive_gaussian": (0.0, 1.0, True),
    "jpeg": (1.0, 100.0, True),
    "random_replace": (0.0, 1.0, True),
    "salt_pepper": (0.0, 1.0, True),
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    strength: float = 0.0
    seed: int = 0
    random_offset: bool = False

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise AttackError(f"unknown attack {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "hist_equalize":
            return
        lo, hi, closed = _DOMAINS[self.kind]
        s = self.strength
        ok = math.isfinite(s) and lo <= s and (s <= hi if closed else s < hi)
        if not ok:
            bracket = "]" if closed else ")"
            raise AttackError(f"{self.kind} strength {s} outside [{lo:g}, {hi:g}{bracket}")


def parse_attack(text: str, seed: int = 0) -> AttackSpec:
    """``"kind:strength"`` (or bare ``"hist_equalize"``) -> :class:`AttackSpec`."""
    kind, _, value = text.partition(":")
    kind = kind.strip()
    try:
        strength = float(value) if value.strip() else 0.0
    except ValueError:
        raise AttackError(f"bad attack strength in {text!r}") from None
    spec = AttackSpec(kind, strength, seed)
    spec.validate()
    return spec


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, s: float) -> np.ndarray:
    if s == 0:
        return img.copy()
    k = gaussian_kernel(4.0 * s)
    out = convolve1d(img, k, axis=0, mode="constant", cval=0.0)
    return convolve1d(out, k, axis=1, mode="constant", cval=0.0)


def crop(img: np.ndarray, p: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Zero everything outside a kept window covering ``1 - p`` of the area."""
    h, w = img.shape[:2]
    keep = math.sqrt(1.0 - p)
    kh = min(h, max(0, round(h * keep)))
    kw = min(w, max(0, round(w * keep)))
    if rng is None:
        y, x = (h - kh) // 2, (w - kw) // 2
    else:
        y = int(rng.integers(0, h - kh + 1))
        x = int(rng.integers(0, w - kw + 1))
    out = np.zeros_like(img)
    out[y:y + kh, x:x + kw] = img[y:y + kh, x:x + kw]
    return out


def additive_gaussian(img: np.ndarray, v: float, rng: np.random.Generator) -> np.ndarray:
    return img + math.sqrt(v) * rng.standard_normal(img.shape)


def _pixel_mask(shape, fraction: float, rng: np.random.Generator) -> np.ndarray:
    h, w = shape[:2]
    count = int(round(fraction * h * w))
    flat = np.zeros(h * w, dtype=bool)
    flat[rng.permutation(h * w)[:count]] = True
    return flat.reshape(h, w)


def random_replace(img: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    mask = _pixel_mask(img.shape, p, rng)
    out = img.copy()
    out[mask] = rng.random((int(mask.sum()), img.shape[2]))
    return out


def salt_pepper(img: np.ndarray, d: float, rng: np.random.Generator) -> np.ndarray:
    mask = _pixel_mask(img.shape, d, rng)
    out = img.copy()
    out[mask] = rng.integers(0, 2, size=int(mask.sum()))[:, None].astype(img.dtype)
    return out


def hist_equalize(img: np.ndarray) -> np.ndarray:
    """Per-channel equalisation on 256 levels: ``round((cdf - cdf_min) / (n - cdf_min) * 255)``."""
    levels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.int64)
    out = np.empty(img.shape, dtype=np.float64)
    n = levels.shape[0] * levels.shape[1]
    for ch in range(img.shape[2]):
        lv = levels[..., ch]
        cdf = np.cumsum(np.bincount(lv.ravel(), minlength=256))
        cdf_min = cdf[lv.min()]
        if n == cdf_min:
            out[..., ch] = lv / 255.0
            continue
        lut = np.rint((cdf - cdf_min) / (n - cdf_min) * 255.0)
        out[..., ch] = lut[lv] / 255.0
    return out


def apply_attack(m: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Distort one ``[H, W, 3]`` image in [0, 1]; output is clamped to [0, 1]."""
    spec.validate()
    img = np.asarray(m, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    kind, s = spec.kind, spec.strength
    if kind == "gaussian_blur":
        out = gaussian_blur(img, s)
    elif kind == "crop":
        out = crop(img, s, rng if spec.random_offset else None)
    elif kind == "additive_gaussian":
        out = additive_gaussian(img, s, rng)
    elif kind == "jpeg":
        out = jpeg_simulate(img, s)
    elif kind == "random_replace":
        out = random_replace(img, s, rng)
    elif kind == "salt_pepper":
        out = salt_pepper(img, s, rng)
    else:
        out = hist_equalize(img)
    return np.clip(out, 0.0, 1.0)


@dataclass
class SweepRow:
    kind: str
    strength: float
    mean_ber: float
    n: int


def robustness_sweep(ckpt: ModelCheckpoint, covers, watermarks, kind: str,
                     strengths: Iterable[float], seed: int = 0) -> list[SweepRow]:
    """Embed once, then for every strength attack, extract and average the BER.

    Marked images pass through 8-bit quantisation before any attack.  Image
    ``i`` is attacked with seed ``seed + i`` so rows are comparable.
    """
    covers = np.asarray(covers)
    watermarks = np.asarray(watermarks)
    marked = codec.quantize8(codec.embed(ckpt, watermarks, covers))
    rows = []
    for s in strengths:
        attacked = np.stack([apply_attack(mi, AttackSpec(kind, float(s), seed + i))
                             for i, mi in enumerate(marked)])
        bits = codec.extract_bits(ckpt, attacked)
        errs = np.mean(bits.astype(bool) != watermarks.astype(bool), axis=(1, 2))
        rows.append(SweepRow(kind, float(s), float(errs.mean()), len(errs)))
    return rows


def write_sweep_csv(rows: Iterable[SweepRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kind", "strength", "mean_ber", "n"])
        for r in rows:
            wr.writerow([r.kind, f"{r.strength:g}", f"{r.mean_ber:.6f}", r.n])
