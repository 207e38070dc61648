"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"WMNETCKP"
    version    u32
    N          u32      invariance-layer redundancy
    lambda     f64      penalty weight
    count      u32      number of parameter entries
    entries    count x { name_len u16, name utf-8, ndim u8, dims u32[ndim],
                         data f32[prod(dims)] }
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .network import DEFAULT_LAMBDA, DEFAULT_N, init_params, redundancy
from .tensor import Tensor

MAGIC = b"WMNETCKP"
FORMAT_VERSION = 1


@dataclass
class ModelCheckpoint:
    params: dict[str, Tensor]
    n: int = DEFAULT_N
    lam: float = DEFAULT_LAMBDA
    version: int = FORMAT_VERSION
    meta: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, n: int = DEFAULT_N, lam: float = DEFAULT_LAMBDA, seed: int = 0) -> "ModelCheckpoint":
        return cls(params=init_params(n, seed=seed), n=n, lam=lam)

    def validate(self) -> None:
        if self.n < 3:
            raise CheckpointError(f"redundancy N must be >= 3, got {self.n}")
        if redundancy(self.params) != self.n:
            raise CheckpointError(f"config N={self.n} but tau.w has {redundancy(self.params)} columns")
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.data)):
                raise CheckpointError(f"parameter {name!r} contains non-finite values")

    def copy(self) -> "ModelCheckpoint":
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return ModelCheckpoint(params=params, n=self.n, lam=self.lam, version=self.version,
                               meta=dict(self.meta))


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    ckpt.validate()
    parts = [MAGIC, struct.pack("<IId", FORMAT_VERSION, ckpt.n, float(ckpt.lam)),
             struct.pack("<I", len(ckpt.params))]
    for name, p in ckpt.params.items():
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(p.data, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> ModelCheckpoint:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a wmnet checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("checkpoint truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, n, lam = take("<IId")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = take("<I")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        if pos + name_len > len(buf):
            raise CheckpointError("checkpoint truncated")
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"checkpoint truncated inside {name!r}")
        data = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape)
        pos += nbytes
        params[name] = Tensor(data.astype(np.float32), requires_grad=True, name=name)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last entry")
    ckpt = ModelCheckpoint(params=params, n=n, lam=lam, version=version)
    ckpt.validate()
    return ckpt


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> ModelCheckpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    return from_bytes(buf)
