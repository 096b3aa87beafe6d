"""AFCN binary checkpoint format.

Layout (little-endian)::

    b"AFCN" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | utf-8 name | u8 rank | rank x u32 extents | f32 values (row-major)
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import logging
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import EncoderImportError, FormatError
from .model import Model, ModelConfig, expected_shapes

log = logging.getLogger(__name__)

MAGIC = b"AFCN"
VERSION = 1


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(tensors))
    for name, t in tensors.items():
        raw_name = name.encode("utf-8")
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
        out += np.ascontiguousarray(t, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def decode_tensors(raw: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic")
    if len(raw) < 16:
        raise FormatError(f"{source}: truncated header")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    end = len(raw) - 4
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        if pos + 2 > end:
            raise FormatError(f"{source}: truncated tensor #{i} header at byte {pos}")
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + n + 1 > end:
            raise FormatError(f"{source}: truncated tensor #{i} name at byte {pos}")
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        rank = raw[pos]
        pos += 1
        if pos + 4 * rank > end:
            raise FormatError(f"{source}: truncated tensor {name!r} extents at byte {pos}")
        shape = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > end:
            raise FormatError(f"{source}: truncated tensor {name!r}: needs {nbytes} bytes "
                              f"at byte {pos}, {end - pos} available")
        if name in tensors:
            raise FormatError(f"{source}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4,
                                      offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != end:
        raise FormatError(f"{source}: {end - pos} unexpected bytes after tensor data")
    (crc,) = struct.unpack_from("<I", raw, end)
    if crc != zlib.crc32(raw[:end]) & 0xFFFFFFFF:
        raise FormatError(f"{source}: CRC32 mismatch")
    return tensors


def read_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes(), str(path))


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(encode_tensors(model.params))


def load_checkpoint(path, config: ModelConfig = ModelConfig()) -> Model:
    tensors = read_tensors(path)
    expected = expected_shapes(config)
    unknown = [n for n in tensors if n not in expected]
    if unknown:
        raise FormatError(f"{path}: unknown tensor {unknown[0]!r}")
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise FormatError(f"{path}: missing tensor {missing[0]!r}")
    bad = [f"{n} {tensors[n].shape} != {s}" for n, s in expected.items() if tensors[n].shape != s]
    if bad:
        raise FormatError(f"{path}: shape mismatch: " + "; ".join(bad))
    return Model(config, {n: tensors[n] for n in expected})


def import_encoder(path, model: Model, strict: bool = False) -> Model:
    """Overwrite encoder tensors from a checkpoint-format file.

    Attention and classifier tensors in the file are ignored. A 3-channel
    conv1 source is folded into a 1-channel model by summing over input
    channels unless ``strict`` is set.
    """
    tensors = read_tensors(path)
    params = dict(model.params)
    problems, replaced = [], []
    for name, src in tensors.items():
        if not name.startswith("encoder."):
            continue
        if name not in params:
            problems.append(f"{name}: not in model")
            continue
        dst = params[name]
        if src.shape == dst.shape:
            params[name] = src.astype(dst.dtype)
            replaced.append(name)
        elif (name.endswith("conv1.kernels") and src.ndim == 4 and src.shape[1] == 3
              and dst.shape[1] == 1 and src.shape[0] == dst.shape[0]
              and src.shape[2:] == dst.shape[2:] and not strict):
            params[name] = src.sum(axis=1, keepdims=True).astype(dst.dtype)
            replaced.append(name)
        else:
            problems.append(f"{name}: {src.shape} vs model {dst.shape}")
    if problems:
        if strict:
            raise EncoderImportError(f"{path}: " + "; ".join(problems))
        for p in problems:
            log.warning("import_encoder skipped %s", p)
    log.info("imported %d encoder tensors from %s", len(replaced), path)
    return Model(model.config, params)
