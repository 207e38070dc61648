"""Command-line entry point: ``wmnet <verb> [options]``.

Verbs: train, embed, extract, attack, sweep, scan-sim, eval.  Every verb
echoes its resolved configuration to stderr and exits 0 only on full success.
Option precedence is command-line flag, then ``--config`` file, then default.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import codec
from .attacks import KINDS, apply_attack, parse_attack, robustness_sweep, write_sweep_csv
from .checkpoint import load_checkpoint
from .errors import ConfigError, DecodeError, ImageReadError, ShapeError, WatermarkError
from .imageio import (COVER_SIZE, WATERMARK_SIZE, load_cover, load_watermark, read_image,
                      resize_bilinear, write_bits, write_image)
from .rs import PAYLOAD_BITS, rs_decode, rs_encode
from .screenscan import CaptureSpec, rectify, scan_trial
from .training import ber, evaluate, list_images, load_config, read_kv_file, report_for, train

log = logging.getLogger("wmnet")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_payload(path) -> bytes:
    """64 raw bytes, or 128 hexadecimal characters (whitespace ignored)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageReadError(path, exc.strerror or str(exc)) from None
    nbytes = PAYLOAD_BITS // 8
    text = b"".join(raw.split())
    if len(text) == 2 * nbytes:
        try:
            return bytes.fromhex(text.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            pass
    if len(raw) == nbytes:
        return raw
    raise ShapeError(f"{path}: payload must be {nbytes} raw bytes or {2 * nbytes} hex characters")


def write_payload(path, payload: bytes) -> None:
    path = Path(path)
    if path.suffix.lower() in (".bin", ".raw"):
        path.write_bytes(payload)
    else:
        path.write_text(payload.hex() + "\n")


def read_corners(path) -> np.ndarray:
    """Four lines of ``x y``."""
    try:
        lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise ImageReadError(path, exc.strerror or str(exc)) from None
    try:
        pts = np.array([[float(a), float(b)] for a, b in lines])
    except ValueError:
        raise ShapeError(f"{path}: corner file must have 4 lines of 'x y'") from None
    if pts.shape != (4, 2):
        raise ShapeError(f"{path}: corner file must have 4 lines of 'x y'")
    return pts


def write_corners(path, corners) -> None:
    Path(path).write_text("".join(f"{x:.6f} {y:.6f}\n" for x, y in np.asarray(corners)))


# ---------------------------------------------------------------------------
# option resolution
# ---------------------------------------------------------------------------

class Resolver:
    """Look up an option: flag value, else config-file entry, else default."""

    def __init__(self, args):
        self.args = args
        self.file = read_kv_file(args.config) if getattr(args, "config", None) else {}
        self.resolved: dict = {}

    def get(self, name, default=None, cast=str):
        value = getattr(self.args, name, None)
        if value is None and name in self.file:
            try:
                value = cast(self.file[name])
            except ValueError:
                raise ConfigError(f"config key {name}: cannot parse {self.file[name]!r}") from None
        if value is None:
            value = default
        self.resolved[name] = value
        return value

    def require(self, name, cast=str):
        value = self.get(name, None, cast)
        if value is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required")
        return value

    def echo(self, verb: str) -> None:
        shown = {k: (str(v) if isinstance(v, Path) else v) for k, v in self.resolved.items()}
        print(f"[wmnet {verb}] " + json.dumps(shown, default=str, sort_keys=True), file=sys.stderr)


def _pair(text: str, cast=float) -> tuple:
    parts = [p for p in str(text).replace(",", " ").split() if p]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigError(f"expected 'lo,hi', got {text!r}")
    return tuple(cast(p) for p in parts)


def capture_spec(res: Resolver, seed: int) -> CaptureSpec:
    d = CaptureSpec()
    jq = res.get("jpeg_quality", None)
    spec = CaptureSpec(
        displacement=res.get("displacement", d.displacement, float),
        brightness=res.get("brightness", d.brightness, float),
        contrast=_pair(res.get("contrast", "{},{}".format(*d.contrast))),
        noise_std=res.get("noise_std", d.noise_std, float),
        jpeg_quality=(None if str(jq).lower() == "none" else _pair(jq, int)) if jq is not None else d.jpeg_quality,
        canvas=res.get("canvas", d.canvas, int),
        seed=seed,
    )
    spec.validate()
    return spec


def _load_marked(path) -> np.ndarray:
    img = read_image(path)
    if img.shape[:2] != (COVER_SIZE, COVER_SIZE):
        log.warning("%s is %dx%d; resizing to %dx%d", path, img.shape[1], img.shape[0], COVER_SIZE, COVER_SIZE)
        img = resize_bilinear(img, COVER_SIZE, COVER_SIZE)
    return img


def _watermark_grid(res: Resolver, ecc: bool) -> np.ndarray:
    source = res.require("watermark")
    if ecc:
        return rs_encode(read_payload(source))
    return load_watermark(source, WATERMARK_SIZE)


def _fmt(x: float) -> float | str:
    return "inf" if math.isinf(x) else round(x, 4)


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    res = Resolver(args)
    overrides = {
        "cover_dir": args.cover, "watermark_source": args.watermark, "checkpoint": args.out,
        "steps": args.steps, "batch_size": args.batch_size, "lr": args.lr, "lam": args.lam,
        "n": args.n, "seed": args.seed, "loss_csv": args.loss_csv,
    }
    cfg = load_config(args.config, **overrides)
    if not cfg.cover_dir:
        raise ConfigError("--cover (cover image directory) is required")
    res.resolved.update(vars(cfg))
    res.echo("train")
    ckpt, rows = train(cfg)
    last = rows[-1] if rows else {}
    print(json.dumps({"checkpoint": cfg.checkpoint, "steps": len(rows),
                      "final_total": last.get("total")}))
    return EXIT_OK


def cmd_embed(args) -> int:
    res = Resolver(args)
    ckpt = load_checkpoint(res.require("checkpoint"))
    cover = load_cover(res.require("cover"))
    ecc = bool(args.ecc)
    grid = _watermark_grid(res, ecc)
    out = res.require("out")
    res.resolved["ecc"] = ecc
    res.echo("embed")
    marked = codec.quantize8(codec.embed(ckpt, grid, cover))
    write_image(out, marked)
    extracted = codec.extract_bits(ckpt, marked)
    rep = report_for(cover, marked, grid, extracted)
    print(json.dumps({"out": str(out), "psnr": _fmt(rep.psnr), "ber": rep.ber,
                      "residual_mean": [round(v, 4) for v in rep.residual_mean],
                      "residual_max": [round(v, 4) for v in rep.residual_max]}))
    return EXIT_OK


def cmd_extract(args) -> int:
    res = Resolver(args)
    ckpt = load_checkpoint(res.require("checkpoint"))
    marked_path = res.require("marked")
    out = res.require("out")
    corners = res.get("corners")
    ecc = bool(args.ecc)
    res.resolved["ecc"] = ecc
    res.echo("extract")
    if corners:
        img = rectify(read_image(marked_path), read_corners(corners))
    else:
        img = _load_marked(marked_path)
    grid = codec.extract_bits(ckpt, img)
    write_bits(out, grid)
    report = {"out": str(out), "bits": int(grid.size)}
    reference = res.get("watermark")
    if reference:
        ref = rs_encode(read_payload(reference)) if ecc else load_watermark(reference)
        report["raw_ber"] = ber(grid, ref)
    status = EXIT_OK
    if ecc:
        payload_out = res.get("payload_out") or str(out) + ".payload"
        try:
            payload = rs_decode(grid)
        except DecodeError as exc:
            report.update({"ecc": "failed", "codeword": exc.codeword, "error": str(exc)})
            status = EXIT_FAILURE
        else:
            write_payload(payload_out, payload)
            report.update({"ecc": "ok", "payload": str(payload_out)})
    print(json.dumps(report))
    return status


def cmd_attack(args) -> int:
    res = Resolver(args)
    seed = res.get("seed", 0, int)
    spec = parse_attack(res.require("attack"), seed=seed)
    src = res.require("marked")
    out = res.require("out")
    res.echo("attack")
    attacked = apply_attack(_load_marked(src), spec)
    write_image(out, attacked)
    print(json.dumps({"out": str(out), "kind": spec.kind, "strength": spec.strength, "seed": seed}))
    return EXIT_OK


def _parse_strengths(text: str) -> list[float]:
    try:
        return [float(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad strength list {text!r}") from None


DEFAULT_GRIDS = {
    "gaussian_blur": "0,0.1,0.2,0.4,0.6,0.85,1",
    "crop": "0,0.2,0.4,0.65,0.8,0.9",
    "additive_gaussian": "0,0.01,0.05,0.1,0.2",
    "jpeg": "100,90,70,50,30,10",
    "random_replace": "0,0.05,0.1,0.2,0.4",
    "salt_pepper": "0,0.05,0.2,0.5,0.9",
    "hist_equalize": "0",
}


def cmd_sweep(args) -> int:
    res = Resolver(args)
    ckpt = load_checkpoint(res.require("checkpoint"))
    cover_dir = res.require("cover")
    kind = res.require("attack").split(":")[0]
    if kind not in KINDS:
        raise ConfigError(f"unknown attack {kind!r}; expected one of {', '.join(KINDS)}")
    strengths = _parse_strengths(res.get("strengths", DEFAULT_GRIDS[kind]))
    count = res.get("count", 32, int)
    seed = res.get("seed", 0, int)
    out = res.require("out")
    res.echo("sweep")
    paths = list_images(cover_dir)[:count]
    if not paths:
        raise ImageReadError(cover_dir, "no cover images found")
    covers = np.stack([load_cover(p) for p in paths])
    rng = np.random.default_rng(seed)
    marks = rng.integers(0, 2, size=(len(covers), WATERMARK_SIZE, WATERMARK_SIZE), dtype=np.uint8)
    rows = robustness_sweep(ckpt, covers, marks, kind, strengths, seed=seed)
    write_sweep_csv(rows, out)
    for r in rows:
        print(json.dumps({"kind": r.kind, "strength": r.strength, "mean_ber": r.mean_ber, "n": r.n}))
    return EXIT_OK


def cmd_scan_sim(args) -> int:
    res = Resolver(args)
    ckpt = load_checkpoint(res.require("checkpoint"))
    cover = load_cover(res.require("cover"))
    seed = res.get("seed", 0, int)
    trials = res.get("trials", 20, int)
    payload_src = res.get("watermark")
    if payload_src:
        payload = read_payload(payload_src)
    else:
        payload = np.random.default_rng(seed).integers(0, 256, PAYLOAD_BITS // 8, dtype=np.uint8).tobytes()
    base = capture_spec(res, seed)
    out_dir = res.get("out")
    res.echo("scan-sim")
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    reports = []
    for i in range(trials):
        spec = CaptureSpec(**{**base.__dict__, "seed": seed + i})
        rep = scan_trial(ckpt, payload, cover, spec)
        reports.append(rep)
        line = {"trial": i, **rep.summary()}
        line["psnr_marked"] = _fmt(rep.psnr_marked)
        line["psnr_rectified"] = _fmt(rep.psnr_rectified)
        print(json.dumps(line))
        if out_dir:
            write_image(Path(out_dir) / f"trial_{i:03d}_photo.png", rep.photo)
            write_corners(Path(out_dir) / f"trial_{i:03d}_corners.txt", rep.corners)
    rate = float(np.mean([r.success for r in reports])) if reports else 0.0
    summary = {"trials": trials, "success_rate": rate,
               "mean_raw_ber": float(np.mean([r.raw_ber for r in reports])) if reports else None}
    print(json.dumps(summary))
    if out_dir:
        (Path(out_dir) / "scan_sim.json").write_text(json.dumps(
            {"summary": summary, "trials": [r.summary() for r in reports]}, default=str, indent=1))
    return EXIT_OK if reports and all(r.success for r in reports) else EXIT_FAILURE


def cmd_eval(args) -> int:
    res = Resolver(args)
    ckpt = load_checkpoint(res.require("checkpoint"))
    cover_dir = res.require("cover")
    count = res.get("count", 64, int)
    seed = res.get("seed", 1, int)
    res.echo("eval")
    paths = list_images(cover_dir)[:count]
    if not paths:
        raise ImageReadError(cover_dir, "no cover images found")
    covers = np.stack([load_cover(p) for p in paths])
    marks = None
    wm = res.get("watermark")
    if wm:
        grid = load_watermark(wm)
        marks = np.repeat(grid[None], len(covers), axis=0)
    rep = evaluate(ckpt, covers, marks, seed=seed)
    d = rep.as_dict()
    d["psnr"] = _fmt(rep.psnr)
    print(json.dumps(d))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    def verb(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        return p

    p = verb("train", cmd_train, "train a checkpoint on a cover directory")
    p.add_argument("--cover", help="cover image directory")
    p.add_argument("--watermark", help="'random' or a watermark image directory")
    p.add_argument("--out", help="checkpoint path to write")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--n", type=int, help="invariance-layer redundancy N")
    p.add_argument("--loss-csv")

    p = verb("embed", cmd_embed, "embed a watermark into a cover image")
    p.add_argument("--checkpoint")
    p.add_argument("--cover")
    p.add_argument("--watermark", help="image, bit-text file, random:<seed>, or payload with --ecc")
    p.add_argument("--out")
    p.add_argument("--ecc", action="store_true", help="treat --watermark as a 512-bit payload file")

    p = verb("extract", cmd_extract, "extract watermark bits from a marked image")
    p.add_argument("--checkpoint")
    p.add_argument("--marked", "--cover", dest="marked")
    p.add_argument("--corners", help="rectify using a 4-line 'x y' corner file first")
    p.add_argument("--out")
    p.add_argument("--ecc", action="store_true")
    p.add_argument("--payload-out")
    p.add_argument("--watermark", help="reference watermark (or payload with --ecc) for raw BER")

    p = verb("attack", cmd_attack, "apply one distortion to an image")
    p.add_argument("--marked", "--cover", dest="marked")
    p.add_argument("--attack", help="kind:strength, e.g. jpeg:50")
    p.add_argument("--out")

    p = verb("sweep", cmd_sweep, "BER versus attack strength")
    p.add_argument("--checkpoint")
    p.add_argument("--cover", help="cover image directory")
    p.add_argument("--attack", help="attack kind")
    p.add_argument("--strengths", help="comma-separated strength grid")
    p.add_argument("--count", type=int)
    p.add_argument("--out", help="CSV path")

    p = verb("scan-sim", cmd_scan_sim, "simulated screen-capture extraction trials")
    p.add_argument("--checkpoint")
    p.add_argument("--cover")
    p.add_argument("--watermark", help="payload file (64 bytes or 128 hex chars)")
    p.add_argument("--trials", type=int)
    p.add_argument("--displacement", type=float)
    p.add_argument("--brightness", type=float)
    p.add_argument("--contrast")
    p.add_argument("--noise-std", type=float)
    p.add_argument("--jpeg-quality", help="'lo,hi' or 'none'")
    p.add_argument("--canvas", type=int)
    p.add_argument("--out", help="directory for the JSON report, photos and corner files")

    p = verb("eval", cmd_eval, "clean PSNR / BER on a cover directory")
    p.add_argument("--checkpoint")
    p.add_argument("--cover", help="cover image directory")
    p.add_argument("--watermark")
    p.add_argument("--count", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose or args.verb == "train" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except WatermarkError as exc:
        print(f"wmnet {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
