"""Binary checkpoint container.

Layout (little-endian throughout)::

    magic     8 bytes  b"JASPERCK"
    version   u32
    config    u32 length + UTF-8 canonical config text
    meta      u32 length + UTF-8 JSON (step, epoch, seed, optimizer kind/hyper, ...)
    count     u32 number of tensors
    tensors   repeated: u32 name length, UTF-8 name, u8 dtype code (0=f32, 1=f64),
              u8 ndim, ndim x u32 dims, row-major data
    crc32     u32 over everything above

Model tensors are stored as ``model/<name>`` (parameters and norm running
statistics); optimizer state as ``optim/<key>``.  Files are written to a
temporary sibling and renamed into place, so a crash never leaves a partial
checkpoint under the final name.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import Model

MAGIC = b"JASPERCK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    model_arrays: dict[str, np.ndarray]
    optim_arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def build_model(self) -> Model:
        model = Model(self.config, seed=self.meta.get("seed", 0))
        model.load_state_arrays(self.model_arrays)
        return model


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode(config: ModelConfig, model_arrays: dict, optim_arrays: dict | None = None, meta: dict | None = None) -> bytes:
    tensors = [(f"model/{k}", v) for k, v in model_arrays.items()]
    tensors += [(f"optim/{k}", v) for k, v in (optim_arrays or {}).items()]
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(config.to_text())]
    parts.append(_pack_str(json.dumps(meta or {}, sort_keys=True)))
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        code = _CODES[arr.dtype]
        parts.append(_pack_str(name))
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint (need {n} bytes at offset {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{self.path}: corrupt string field ({exc})") from None


def decode(data: bytes, path="<bytes>") -> Checkpoint:
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    r = _Reader(data[:-4], path)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    try:
        config = ModelConfig.from_text(r.text())
        meta = json.loads(r.text())
    except (ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: invalid header ({exc})") from None
    model_arrays, optim_arrays = {}, {}
    for _ in range(r.u32()):
        name = r.text()
        code, ndim = struct.unpack("<BB", r.take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        dt = _DTYPES[code]
        arr = np.frombuffer(r.take(dt.itemsize * int(np.prod(shape))), dtype=dt).reshape(shape)
        arr = arr.astype(dt.newbyteorder("="))
        prefix, _, key = name.partition("/")
        if prefix == "model":
            model_arrays[key] = arr
        elif prefix == "optim":
            optim_arrays[key] = arr
        else:
            raise CheckpointError(f"{path}: unexpected tensor namespace in {name!r}")
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(config, model_arrays, optim_arrays, meta)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)  # mkstemp creates 0600; match a normal open()
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(model: Model, path, optimizer=None, meta: dict | None = None) -> None:
    meta = {"seed": model.seed, **(meta or {})}
    optim_arrays = None
    if optimizer is not None:
        meta["optimizer"] = {"kind": optimizer.kind, "hyper": optimizer.hyperparams()}
        optim_arrays = optimizer.state_arrays()
    _atomic_write(Path(path), encode(model.cfg, model.state_arrays(), optim_arrays, meta))


def read_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    return decode(data, path)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Model:
    """Rebuild the model stored at ``path``.

    If ``expected_config`` is given, its vocabulary and layout must match the
    stored config exactly.
    """
    ckpt = read_checkpoint(path)
    if expected_config is not None and expected_config != ckpt.config:
        if expected_config.vocab != ckpt.config.vocab:
            raise CheckpointError(f"{path}: vocabulary mismatch between checkpoint and config")
        raise CheckpointError(f"{path}: model config differs from checkpoint")
    try:
        return ckpt.build_model()
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
