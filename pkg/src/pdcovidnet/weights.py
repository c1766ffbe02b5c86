"""Binary weight files.

Layout (all integers little-endian)::

    b"PDCN"            magic
    u16                format version (1)
    u32                record count
    per record:
        u16            name length in bytes
        bytes          UTF-8 name, e.g. "head.fc1.weight"
        u8             dtype tag (1 = float32)
        u8             rank
        u64 * rank     extents
        f32 * prod     payload, row-major
    u32                CRC-32 of every preceding byte
"""

from __future__ import annotations

import io
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptionError, IncompatibleWeightsError
from .model import ModelGraph, build_pdcovidnet, config_from_arrays

MAGIC = b"PDCN"
VERSION = 1
DTYPE_F32 = 1


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> dict[str, np.ndarray]:
    if len(data) < 14 or data[:4] != MAGIC:
        raise CorruptionError("not a weight file (bad magic or too short)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("CRC mismatch")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise CorruptionError(f"unsupported format version {version}")
    pos = 10
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            tag, rank = struct.unpack_from("<BB", body, pos)
            pos += 2
            if tag != DTYPE_F32:
                raise CorruptionError(f"{name}: unknown dtype tag {tag}")
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            size = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + size > len(body):
                raise CorruptionError(f"{name}: payload runs past end of file")
            arrays[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptionError(f"malformed record: {exc}") from exc
    if pos != len(body):
        raise CorruptionError("trailing bytes after last record")
    return arrays


def read_weights(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def save_weights(model: ModelGraph, path):
    data = encode(model.named_arrays())
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_weights(model: ModelGraph, path):
    """Copy parameters from ``path`` into ``model``; nothing changes unless every record validates."""
    arrays = read_weights(path)
    target = model.named_arrays()
    for name, arr in target.items():
        if name not in arrays:
            raise IncompatibleWeightsError(f"layer {name} missing from weight file")
        if arrays[name].shape != arr.shape:
            raise IncompatibleWeightsError(
                f"layer {name}: file shape {arrays[name].shape} != model shape {arr.shape}"
            )
    extra = set(arrays) - set(target)
    if extra:
        raise IncompatibleWeightsError(f"layer {sorted(extra)[0]} not present in model")
    if not all(np.isfinite(a).all() for a in arrays.values()):
        raise CorruptionError("weight file holds non-finite values")
    for name, arr in target.items():
        arr[...] = arrays[name]
    return model


def model_from_file(path, class_names=None) -> ModelGraph:
    """Rebuild the architecture described by a weight file and load it."""
    config = config_from_arrays(read_weights(path))
    if class_names is not None and len(class_names) != config.classes:
        raise IncompatibleWeightsError(
            f"weights have {config.classes} classes but {len(class_names)} class names were given"
        )
    model = build_pdcovidnet(config, rng=0, class_names=class_names)
    return load_weights(model, path)
