"""Binary checkpoint format.

Layout (little-endian)::

    b"RSNM" | u32 version | u32 epoch
    repeated: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nets import DiscriminatorNet, GeneratorNet
from .optim import AdamState

MAGIC = b"RSNM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    epoch: int = 0
    records: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = bytearray(MAGIC)
        out += struct.pack("<II", FORMAT_VERSION, self.epoch)
        for name, arr in self.records.items():
            arr = np.asarray(arr, dtype="<f4")
            raw_name = name.encode("utf-8")
            out += struct.pack("<H", len(raw_name)) + raw_name
            out += struct.pack("<B", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes(order="C")
        out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelCheckpoint":
        if len(blob) < 16 or blob[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, epoch = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise CheckpointError("checkpoint CRC mismatch (file corrupted)")
        records = {}
        pos = 12
        try:
            while pos < len(body):
                (n,) = struct.unpack_from("<H", body, pos)
                pos += 2
                name = body[pos:pos + n].decode("utf-8")
                pos += n
                (rank,) = struct.unpack_from("<B", body, pos)
                pos += 1
                shape = struct.unpack_from(f"<{rank}I", body, pos)
                pos += 4 * rank
                count = int(np.prod(shape, dtype=np.int64))
                if pos + 4 * count > len(body):
                    raise CheckpointError(f"record {name!r} runs past end of file")
                records[name] = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
                pos += 4 * count
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {exc}") from exc
        return cls(epoch=epoch, records=records)


def _adam_records(prefix: str, state: AdamState) -> dict[str, np.ndarray]:
    recs = {f"{prefix}.step": np.array([state.step], dtype=np.float32)}
    for name in state.m:
        recs[f"{prefix}.m.{name}"] = state.m[name]
        recs[f"{prefix}.v.{name}"] = state.v[name]
    return recs


def make_checkpoint(gen: GeneratorNet, disc: DiscriminatorNet | None = None,
                    opt_g: AdamState | None = None, opt_d: AdamState | None = None,
                    epoch: int = 0) -> ModelCheckpoint:
    records = {name: p.data for name, p in gen.parameters().items()}
    if disc is not None:
        records.update({name: p.data for name, p in disc.parameters().items()})
    if opt_g is not None:
        records.update(_adam_records("adam_g", opt_g))
    if opt_d is not None:
        records.update(_adam_records("adam_d", opt_d))
    return ModelCheckpoint(epoch=epoch, records=records)


def write_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(ckpt.to_bytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(path, gen, disc=None, opt_g=None, opt_d=None, epoch: int = 0) -> None:
    write_checkpoint(make_checkpoint(gen, disc, opt_g, opt_d, epoch), path)


def load_checkpoint(path) -> ModelCheckpoint:
    return ModelCheckpoint.from_bytes(Path(path).read_bytes())


def _restore_params(module, records) -> None:
    for name, p in module.parameters().items():
        if name not in records:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if records[name].shape != p.shape:
            raise CheckpointError(f"{name}: shape {records[name].shape} != model {p.shape}")
        p.data = records[name].astype(np.float64)
        p.zero_grad()


def _restore_adam(prefix: str, state: AdamState, records) -> None:
    key = f"{prefix}.step"
    if key not in records:
        return
    state.step = int(records[key][0])
    state.m, state.v = {}, {}
    mp, vp = f"{prefix}.m.", f"{prefix}.v."
    for name, arr in records.items():
        if name.startswith(mp):
            state.m[name[len(mp):]] = arr.astype(np.float64)
        elif name.startswith(vp):
            state.v[name[len(vp):]] = arr.astype(np.float64)


def restore(ckpt: ModelCheckpoint, gen: GeneratorNet, disc=None, opt_g=None, opt_d=None) -> int:
    """Load parameters (and optimiser moments when present) into live objects; returns the epoch."""
    _restore_params(gen, ckpt.records)
    if disc is not None:
        _restore_params(disc, ckpt.records)
    if opt_g is not None:
        _restore_adam("adam_g", opt_g, ckpt.records)
    if opt_d is not None:
        _restore_adam("adam_d", opt_d, ckpt.records)
    return ckpt.epoch
