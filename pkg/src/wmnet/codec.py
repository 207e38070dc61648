"""Inference helpers: embed bit grids into covers and read them back, in numpy."""

from __future__ import annotations

import numpy as np

from . import network as net
from . import tensor as T
from .checkpoint import ModelCheckpoint
from .errors import ShapeError

DEFAULT_BATCH = 8


def _batched(x: np.ndarray, ndim: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        x = x[None]
    return x


def _as_wm(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim == 2:
        bits = bits[None]
    if bits.ndim == 3:
        bits = bits[..., None]
    if bits.ndim != 4 or bits.shape[-1] != 1:
        raise ShapeError(f"watermark must be [h, w] or [B, h, w], got {np.shape(bits)}")
    return bits


def embed(ckpt: ModelCheckpoint, bits, covers, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    """Marked images for each (watermark, cover) pair, float in (0, 1)."""
    single = np.ndim(covers) == 3
    w = _as_wm(bits)
    c = _batched(covers, 4)
    if len(w) != len(c):
        raise ShapeError(f"{len(w)} watermarks for {len(c)} covers")
    out = []
    with T.no_grad():
        for i in range(0, len(c), batch_size):
            wt = T.tensor(w[i:i + batch_size])
            ct = T.tensor(c[i:i + batch_size])
            wf = net.mu_forward(wt, ckpt.params)
            out.append(net.embed_forward(wf, ct, ckpt.params).data)
    m = np.concatenate(out, axis=0)
    return m[0] if single else m


def extract_probs(ckpt: ModelCheckpoint, marked, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    """Per-bit probabilities ``[B, h, w]`` (or ``[h, w]`` for one image)."""
    single = np.ndim(marked) == 3
    m = _batched(marked, 4)
    if m.shape[-1] != 3:
        raise ShapeError(f"marked image must have 3 channels, got {m.shape}")
    out = []
    with T.no_grad():
        for i in range(0, len(m), batch_size):
            out.append(net.extract_forward(T.tensor(m[i:i + batch_size]), ckpt.params).data[..., 0])
    p = np.concatenate(out, axis=0)
    return p[0] if single else p


def extract_bits(ckpt: ModelCheckpoint, marked, batch_size: int = DEFAULT_BATCH) -> np.ndarray:
    return (extract_probs(ckpt, marked, batch_size) >= 0.5).astype(np.uint8)


def quantize8(img) -> np.ndarray:
    """Round-trip through 8-bit storage, as when written to PNG."""
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255.0) / 255.0
