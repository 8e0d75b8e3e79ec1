# staflow_backend/checkpoint.py
"""
SFNC checkpoint blob (little-endian):

    b"SFNC" | u32 version | u32 header_len | header JSON (utf-8)
    | tensors then buffers, flat, in declaration order | u32 CRC32 of everything before

The header JSON carries the ArchConfig, the payload precision and the
declared (name, shape) list so a reader can check the layout before trusting it.
"""

import json
import logging
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagicError, IntegrityError, TruncationError, VersionMismatchError
from .model import ArchConfig, StaFlowParams, layout
from .tensor import Precision, Tensor

logger = logging.getLogger(__name__)

MAGIC = b"SFNC"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _payload_dtype(precision: str) -> np.dtype:
    return np.dtype("<f8" if precision == Precision.DOUBLE.value else "<f4")


def checkpoint_bytes(params: StaFlowParams) -> bytes:
    precision = Precision.of(params.dtype).value
    header = {
        "arch": params.arch.to_dict(),
        "precision": precision,
        "tensors": [[name, list(t.shape)] for name, t in params.tensors.items()],
        "buffers": [[name, list(b.shape)] for name, b in params.buffers.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    dtype = _payload_dtype(precision)
    chunks = [_PREFIX.pack(MAGIC, VERSION, len(header_bytes)), header_bytes]
    chunks += [np.ascontiguousarray(t.data, dtype=dtype).tobytes() for t in params.tensors.values()]
    chunks += [np.ascontiguousarray(b, dtype=dtype).tobytes() for b in params.buffers.values()]
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(params: StaFlowParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(checkpoint_bytes(params))
    os.replace(tmp, path)
    logger.info("saved checkpoint %s (%d parameters)", path, params.n_parameters())
    return path


def load_checkpoint(path) -> StaFlowParams:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an SFNC checkpoint (magic {blob[:4]!r})")
    if len(blob) < _PREFIX.size + 4:
        raise TruncationError(path, _PREFIX.size + 4, len(blob))
    _, version, header_len = _PREFIX.unpack_from(blob, 0)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
    header_end = _PREFIX.size + header_len
    if header_end + 4 > len(blob):
        raise TruncationError(path, header_end + 4, len(blob))
    try:
        header = json.loads(blob[_PREFIX.size : header_end].decode("utf-8"))
        arch = ArchConfig.from_dict(header["arch"])
        dtype = _payload_dtype(header["precision"])
        declared_t = [(n, tuple(s)) for n, s in header["tensors"]]
        declared_b = [(n, tuple(s)) for n, s in header["buffers"]]
        n_values = sum(int(np.prod(s)) for _, s in declared_t + declared_b)
    except Exception as e:  # any header corruption lands here
        raise IntegrityError(f"{path}: unreadable checkpoint header ({e})") from e

    expected = header_end + n_values * dtype.itemsize + 4
    if len(blob) != expected:
        if len(blob) < expected:
            raise TruncationError(path, expected, len(blob))
        raise IntegrityError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"{path}: CRC32 mismatch, checkpoint is corrupted")

    want_t, want_b = layout(arch)
    if declared_t != want_t or declared_b != want_b:
        raise IntegrityError(f"{path}: tensor layout disagrees with its architecture config")

    values = np.frombuffer(blob, dtype=dtype, count=n_values, offset=header_end)
    native = np.dtype(dtype.newbyteorder("="))
    tensors, buffers, offset = {}, {}, 0
    for name, shape in declared_t:
        n = int(np.prod(shape))
        data = values[offset : offset + n].astype(native).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=True, dtype=native, name=name)
        offset += n
    for name, shape in declared_b:
        n = int(np.prod(shape))
        buffers[name] = values[offset : offset + n].astype(native).reshape(shape)
        offset += n
    return StaFlowParams(arch, tensors, buffers)
