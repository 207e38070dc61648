"""Training loop, data loading and clean evaluation (PSNR / BER)."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import codec
from . import network as net
from . import tensor as T
from .checkpoint import ModelCheckpoint, save_checkpoint
from .errors import ConfigError, ImageReadError, NonFiniteError, ShapeError
from .imageio import COVER_SIZE, WATERMARK_SIZE, load_cover, watermark_from_image
from .loss import compute_loss, route_gradients
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp"}
LOSS_COLUMNS = ["step", "term_extraction", "term_fidelity", "term_correlation", "penalty", "total"]


@dataclass
class TrainConfig:
    cover_dir: str = ""
    watermark_source: str = "random"
    batch_size: int = 8
    steps: int = 2000
    lr: float = 1e-3
    lam: float = net.DEFAULT_LAMBDA
    n: int = net.DEFAULT_N
    seed: int = 0
    checkpoint: str = "checkpoint.wmk"
    loss_csv: str = ""
    checkpoint_every: int = 500
    eval_every: int = 0
    eval_cover_dir: str = ""
    eval_count: int = 32
    log_every: int = 50

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.n < 3:
            raise ConfigError(f"n must be >= 3, got {self.n}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")


_ALIASES = {"lambda": "lam", "batch": "batch_size", "B": "batch_size", "N": "n",
            "watermarks": "watermark_source", "covers": "cover_dir", "learning_rate": "lr"}


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into raw strings; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def read_kv_file(path) -> dict[str, str]:
    try:
        return parse_kv_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None


def parse_config_text(text: str, strict: bool = True) -> dict:
    """Training-config values from ``key = value`` text, coerced to field types.

    Unknown keys raise unless ``strict`` is false, in which case they are
    skipped (a shared config file may carry settings for other commands).
    """
    known = {f.name for f in fields(TrainConfig)}
    out = {}
    for key, value in parse_kv_text(text).items():
        key = _ALIASES.get(key, key)
        if key not in known:
            if strict:
                raise ConfigError(f"unknown config key {key!r}")
            continue
        out[key] = coerce(key, value)
    return out


def coerce(key: str, value):
    kind = {f.name: f.type for f in fields(TrainConfig)}[key]
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return str(value)


def load_config(path, **overrides) -> TrainConfig:
    """Config file values, then non-None ``overrides`` on top."""
    values = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        values = parse_config_text(text, strict=False)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ImageReadError(d, "not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_cover_dir(directory, limit: int | None = None) -> np.ndarray:
    paths = list_images(directory)
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise ImageReadError(directory, "no cover images found")
    return np.stack([load_cover(p, COVER_SIZE) for p in paths]).astype(np.float32)


class WatermarkStream:
    """Endless supply of training watermarks: fresh random bits, or draws from an image set."""

    def __init__(self, source: str, rng: np.random.Generator, size: int = WATERMARK_SIZE):
        self.rng = rng
        self.size = size
        self.pool = None
        if source != "random":
            paths = list_images(source)
            if not paths:
                raise ImageReadError(source, "no watermark images found")
            self.pool = np.stack([watermark_from_image(p, size) for p in paths])

    def sample(self, n: int) -> np.ndarray:
        if self.pool is None:
            return self.rng.integers(0, 2, size=(n, self.size, self.size), dtype=np.uint8)
        return self.pool[self.rng.integers(0, len(self.pool), size=n)]


def train(config: TrainConfig, covers: np.ndarray | None = None,
          init: ModelCheckpoint | None = None, eval_covers: np.ndarray | None = None,
          progress=None) -> tuple[ModelCheckpoint, list[dict]]:
    """Run the optimisation loop; returns the final checkpoint and per-step loss rows.

    ``covers`` overrides ``config.cover_dir`` (useful for in-memory corpora).
    Every step samples a batch, runs the full network, backpropagates the
    routed structural risk and applies one ADAM update.
    """
    config.validate()
    if covers is None:
        covers = load_cover_dir(config.cover_dir)
    covers = np.asarray(covers, dtype=np.float32)
    if len(covers) == 0:
        raise ShapeError("training needs a non-empty cover corpus")
    if eval_covers is None and config.eval_cover_dir:
        eval_covers = load_cover_dir(config.eval_cover_dir, limit=config.eval_count)

    rng = np.random.default_rng(config.seed)
    ckpt = init.copy() if init is not None else ModelCheckpoint.fresh(config.n, config.lam, seed=config.seed)
    ckpt.lam = config.lam
    params = ckpt.params
    state = AdamState(lr=config.lr)
    marks = WatermarkStream(config.watermark_source, rng, covers.shape[1] // net.RESHAPE_FACTOR)

    rows: list[dict] = []
    writer = fh = None
    if config.loss_csv:
        Path(config.loss_csv).parent.mkdir(parents=True, exist_ok=True)
        fh = open(config.loss_csv, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
    t0 = time.time()
    try:
        for step in range(1, config.steps + 1):
            idx = rng.integers(0, len(covers), size=config.batch_size)
            w = T.tensor(marks.sample(config.batch_size)[..., None])
            c = T.tensor(covers[idx])
            out = net.full_forward(w, c, params)
            br = compute_loss(out, w, c, params, config.lam)
            values = br.values()
            if not all(math.isfinite(v) for v in values.values()):
                raise NonFiniteError(f"non-finite loss at step {step}: {values}", step=step)
            for p in params.values():
                p.zero_grad()
            route_gradients(br, params)
            del out, br
            adam_step(params, None, state)
            row = {"step": step, **values}
            rows.append(row)
            if writer:
                writer.writerow(row)
                fh.flush()
            if config.log_every and step % config.log_every == 0:
                log.info("step %d  total %.4f  extract %.4f  fidelity %.4f  psi %.4f  P %.4f  (%.1fs)",
                         step, values["total"], values["term_extraction"], values["term_fidelity"],
                         values["term_correlation"], values["penalty"], time.time() - t0)
            if config.eval_every and eval_covers is not None and step % config.eval_every == 0:
                report = evaluate(ckpt, eval_covers, seed=config.seed + 1)
                log.info("step %d  eval PSNR %.2f dB  BER %.4f", step, report.psnr, report.ber)
            if config.checkpoint and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(ckpt, config.checkpoint)
            if progress is not None:
                progress(step, values)
    finally:
        if fh:
            fh.close()
    for p in params.values():
        p.zero_grad()
    if config.checkpoint:
        save_checkpoint(ckpt, config.checkpoint)
    return ckpt, rows


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def psnr(reference, test, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    mse = float(np.mean((np.asarray(reference, np.float64) - np.asarray(test, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ber(bits, reference) -> float:
    bits = np.asarray(bits).astype(bool)
    reference = np.asarray(reference).astype(bool)
    if bits.shape != reference.shape:
        raise ShapeError(f"bit arrays differ in shape: {bits.shape} vs {reference.shape}")
    return float(np.mean(bits != reference))


@dataclass
class EvalReport:
    psnr: float
    ber: float
    residual_mean: tuple
    residual_max: tuple
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def residual_stats(covers, marked) -> tuple[tuple, tuple]:
    diff = np.abs(np.asarray(marked, np.float64) - np.asarray(covers, np.float64)) * 255.0
    axes = tuple(range(diff.ndim - 1))
    return tuple(float(v) for v in diff.mean(axis=axes)), tuple(float(v) for v in diff.max(axis=axes))


def report_for(covers, marked, bits, extracted) -> EvalReport:
    covers = np.asarray(covers)
    marked = np.asarray(marked)
    if covers.ndim == 3:
        covers, marked = covers[None], marked[None]
    scores = [psnr(c, m) for c, m in zip(covers, marked)]
    mean_psnr = math.inf if any(math.isinf(s) for s in scores) else float(np.mean(scores))
    rmean, rmax = residual_stats(covers, marked)
    return EvalReport(psnr=mean_psnr, ber=ber(extracted, bits), residual_mean=rmean,
                      residual_max=rmax, n=len(covers))


def evaluate(ckpt: ModelCheckpoint, covers, watermarks=None, seed: int = 1,
             quantize: bool = True, batch_size: int = codec.DEFAULT_BATCH) -> EvalReport:
    """Embed, optionally store as 8-bit, extract, and score.

    ``watermarks`` defaults to fresh random grids drawn from ``seed``, one per cover.
    """
    covers = np.asarray(covers)
    if covers.ndim == 3:
        covers = covers[None]
    if len(covers) == 0:
        raise ShapeError("evaluation needs at least one cover")
    if watermarks is None:
        rng = np.random.default_rng(seed)
        side = covers.shape[1] // net.RESHAPE_FACTOR
        watermarks = rng.integers(0, 2, size=(len(covers), side, side), dtype=np.uint8)
    watermarks = np.asarray(watermarks)
    if watermarks.ndim == 2:
        watermarks = watermarks[None]
    if len(watermarks) == 0:
        raise ShapeError("evaluation needs at least one watermark")
    if len(watermarks) != len(covers):
        raise ShapeError(f"{len(watermarks)} watermarks for {len(covers)} covers")
    marked = codec.embed(ckpt, watermarks, covers, batch_size)
    if quantize:
        marked = codec.quantize8(marked)
    extracted = codec.extract_bits(ckpt, marked, batch_size)
    return report_for(covers, marked, watermarks, extracted)
