"""Four-point homographies and bilinear perspective warping.

Points are ``(x, y)`` in pixel-centre coordinates: pixel ``(row, col)`` sits at
``x = col, y = row``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import GeometryError

DET_TOL = 1e-9


def _check_points(pts, what: str) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape != (4, 2):
        raise GeometryError(f"{what}: expected 4 (x, y) points, got shape {pts.shape}")
    scale = max(1.0, float(np.ptp(pts)))
    for a, b, c in itertools.combinations(range(4), 3):
        u, v = pts[b] - pts[a], pts[c] - pts[a]
        if abs(u[0] * v[1] - u[1] * v[0]) <= 1e-9 * scale * scale:
            raise GeometryError(f"{what}: points {a}, {b}, {c} are collinear")
    return pts


def normalize(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    return H


def estimate_homography(src, dst) -> np.ndarray:
    """Exact DLT through four correspondences with ``H[2, 2]`` fixed to 1."""
    src = _check_points(src, "source")
    dst = _check_points(dst, "destination")
    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for k, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * k] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * k + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * k] = u
        rhs[2 * k + 1] = v
    try:
        h = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise GeometryError("degenerate correspondences: singular DLT system") from None
    H = np.append(h, 1.0).reshape(3, 3)
    # One Newton-style refinement step on the same linear system tightens
    # reprojection to machine precision for badly scaled inputs.
    resid = rhs - A @ h
    if np.any(resid):
        h = h + np.linalg.solve(A, resid)
        H = np.append(h, 1.0).reshape(3, 3)
    return H


def apply_homography(H, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    hom = np.c_[pts, np.ones(len(pts))] @ np.asarray(H, dtype=np.float64).T
    return hom[:, :2] / hom[:, 2:3]


def invert(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    scale = np.abs(H).max()
    det = np.linalg.det(H / scale) if scale > 0 and np.all(np.isfinite(H)) else 0.0
    if abs(det) <= DET_TOL:
        raise GeometryError(f"homography is singular (det {det:.3g})")
    return normalize(np.linalg.inv(H))


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates; neighbours outside the image read as zero."""
    h, w = img.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    out = np.zeros(xs.shape + img.shape[2:], dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.zeros_like(out)
            vals[inside] = img[yy[inside], xx[inside]]
            out += wy * wx * vals
    return out


def warp(img: np.ndarray, H, out_size) -> np.ndarray:
    """Forward-warp ``img`` by ``H`` into an ``(height, width)`` canvas via inverse mapping."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    Hinv = invert(H)
    oh, ow = out_size
    ys, xs = np.mgrid[0:oh, 0:ow].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    src = Hinv @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (src[0] / src[2]).reshape(oh, ow)
        sy = (src[1] / src[2]).reshape(oh, ow)
    bad = ~np.isfinite(sx) | ~np.isfinite(sy) | (src[2].reshape(oh, ow) <= 0)
    sx[bad] = -10.0
    sy[bad] = -10.0
    out = bilinear_sample(img, sx, sy)
    return out[..., 0] if squeeze else out
