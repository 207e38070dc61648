"""Baseline-JPEG degradation model: YCbCr, 8x8 DCT, table quantisation, and back.

No entropy coding and no chroma subsampling; the point is the lossy
quantisation round trip, not a compatible bitstream.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from .errors import AttackError

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def scaled_table(base: np.ndarray, quality: float) -> np.ndarray:
    """IJG quality scaling, entries clamped to [1, 255]."""
    if not 1 <= quality <= 100:
        raise AttackError(f"jpeg quality must be in [1, 100], got {quality}")
    s = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * s + 50.0) / 100.0), 1, 255)


def _blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    nh, nw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nh * 8, nw * 8)


def jpeg_simulate(img: np.ndarray, quality: float) -> np.ndarray:
    """Compress and decompress an RGB image in [0, 1] at the given quality."""
    tables = (scaled_table(LUMA_TABLE, quality), scaled_table(CHROMA_TABLE, quality),
              scaled_table(CHROMA_TABLE, quality))
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ph, pw = -h % 8, -w % 8
    x = np.pad(img * 255.0, ((0, ph), (0, pw), (0, 0)), mode="edge")
    ycc = x @ _RGB2YCC.T
    ycc[..., 1:] += 128.0
    out = np.empty_like(ycc)
    for ch in range(3):
        blocks = _blocks(ycc[..., ch] - 128.0)
        coef = dctn(blocks, axes=(2, 3), norm="ortho")
        q = np.round(coef / tables[ch]) * tables[ch]
        out[..., ch] = _unblocks(idctn(q, axes=(2, 3), norm="ortho")) + 128.0
    out[..., 1:] -= 128.0
    rgb = out @ _YCC2RGB.T / 255.0
    return np.clip(rgb[:h, :w], 0.0, 1.0)
