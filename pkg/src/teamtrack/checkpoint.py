"""Binary checkpoint format for the tracklet classifier.

Layout (little-endian):

    magic b"TLCK", u32 version,
    u32 config JSON length, config JSON bytes,
    u32 tensor count,
    per tensor: u16 name length, name utf-8, u8 ndim, ndim * u64 dims,
                float32 data,
    u32 CRC-32 of all tensor data bytes.

Tensor data is stored as float32, the training precision. The batch-norm
running statistics ride along under the reserved names ``running.mean`` and
``running.var``.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .autodiff import Tensor
from .config import ProjectConfig
from .io import FileFormatError
from .model import TrackletClassifier

MAGIC = b"TLCK"
VERSION = 1
_BUFFERS = ("running.mean", "running.var")


def _pack_tensor(name: str, data: np.ndarray) -> tuple[bytes, bytes]:
    """Returns (header, payload); payload is what the checksum covers."""
    raw = name.encode("utf-8")
    header = struct.pack("<H", len(raw)) + raw + struct.pack("<B", data.ndim)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    return header, np.ascontiguousarray(data, dtype="<f4").tobytes()


def save_checkpoint(model: TrackletClassifier, path: str | os.PathLike) -> str:
    """Write the model atomically; returns the sha256 hex digest of the
    file."""
    tensors: list[tuple[str, np.ndarray]] = [(k, p.data) for k, p in model.params.items()]
    tensors.append(("running.mean", model.running_mean))
    tensors.append(("running.var", model.running_var))

    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(config_blob)), config_blob,
             struct.pack("<I", len(tensors))]
    crc = 0
    for name, data in tensors:
        header, payload = _pack_tensor(name, data)
        parts.append(header)
        parts.append(payload)
        crc = zlib.crc32(payload, crc)
    parts.append(struct.pack("<I", crc))
    blob = b"".join(parts)

    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(blob).hexdigest()


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FileFormatError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(path: str | os.PathLike) -> TrackletClassifier:
    """Read a checkpoint and rebuild the classifier in float32 (the stored
    precision, and the training precision, so a save/load round trip is
    bit-exact)."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, path)
    if r.read(4) != MAGIC:
        raise FileFormatError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version}")
    (config_len,) = r.unpack("<I")
    try:
        config = ProjectConfig.from_dict(json.loads(r.read(config_len)))
    except (ValueError, TypeError) as exc:
        raise FileFormatError(f"{path}: bad embedded config: {exc}") from None
    (count,) = r.unpack("<I")

    tensors: dict[str, np.ndarray] = {}
    crc = 0
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.read(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}Q")
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = r.read(4 * size)
        crc = zlib.crc32(payload, crc)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    (stored_crc,) = r.unpack("<I")
    if stored_crc != crc:
        raise FileFormatError(f"{path}: checksum mismatch")

    model = TrackletClassifier(config, seed=None)
    for name in _BUFFERS:
        if name not in tensors:
            raise FileFormatError(f"{path}: missing tensor {name}")
    model.running_mean = tensors.pop("running.mean")
    model.running_var = tensors.pop("running.var")
    model.params = {name: Tensor(data, requires_grad=True) for name, data in tensors.items()}

    reference = TrackletClassifier(config, seed=0)
    expected = {k: p.shape for k, p in reference.params.items()}
    actual = {k: p.shape for k, p in model.params.items()}
    if expected != actual:
        raise FileFormatError(f"{path}: tensor set does not match the embedded config")
    return model


def checkpoint_hash(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
