"""Desk-scale cover corpus built from the sample photographs shipped with
scikit-image and scikit-learn.

Training and held-out covers are cut from disjoint source photographs, so a
held-out evaluation never sees pixels the network trained on.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import COVER_SIZE, resize_bilinear, write_image

TRAIN_SOURCES = ("astronaut", "coffee", "hubble_deep_field", "immunohistochemistry", "rocket",
                 "retina", "motorcycle_left", "china", "camera", "brick", "grass", "gravel", "moon")
HELDOUT_SOURCES = ("chelsea", "flower", "motorcycle_right", "coins", "clock")


def _source(name: str) -> np.ndarray:
    if name in ("china", "flower"):
        from sklearn.datasets import load_sample_image
        img = load_sample_image(f"{name}.jpg")
    elif name.startswith("motorcycle_"):
        from skimage import data
        left, right, _ = data.stereo_motorcycle()
        img = left if name.endswith("left") else right
    else:
        from skimage import data
        img = getattr(data, name)()
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img[..., :3].astype(np.float64) / 255.0


def random_crops(img: np.ndarray, count: int, rng: np.random.Generator,
                 size: int = COVER_SIZE, min_side: int = 96) -> list[np.ndarray]:
    h, w = img.shape[:2]
    out = []
    for _ in range(count):
        side = int(rng.integers(min(min_side, h, w), min(h, w) + 1))
        y = int(rng.integers(0, h - side + 1))
        x = int(rng.integers(0, w - side + 1))
        crop = img[y:y + side, x:x + side]
        if rng.random() < 0.5:
            crop = crop[:, ::-1]
        out.append(resize_bilinear(crop, size, size))
    return out


def build_corpus(out_dir, n_train: int = 320, n_heldout: int = 64, seed: int = 0) -> tuple[Path, Path]:
    """Write ``train/`` and ``heldout/`` PNG covers under ``out_dir``."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    dirs = []
    for split, names, total in (("train", TRAIN_SOURCES, n_train), ("heldout", HELDOUT_SOURCES, n_heldout)):
        d = out_dir / split
        d.mkdir(parents=True, exist_ok=True)
        per = np.full(len(names), total // len(names))
        per[: total % len(names)] += 1
        k = 0
        for name, count in zip(names, per):
            for crop in random_crops(_source(name), int(count), rng):
                write_image(d / f"{split}_{k:04d}_{name}.png", crop)
                k += 1
        dirs.append(d)
    return dirs[0], dirs[1]


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "data/desk"
    train_dir, heldout_dir = build_corpus(target)
    print(f"wrote {train_dir} and {heldout_dir}")
