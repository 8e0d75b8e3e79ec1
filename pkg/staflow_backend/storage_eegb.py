# staflow_backend/storage_eegb.py
"""
EEGB trial files (little-endian):

    b"EEGB" | u32 version=1 | u32 n_trials | u32 n_channels | u32 n_samples
    | f32 sample_rate_hz | u32 n_classes | u8 has_channel_names
    | [n_channels x (u16 byte length + utf-8 name)]
    | u16 labels[n_trials] | f32 data[n_trials][n_channels][n_samples]
    | u32 CRC32 of all preceding bytes

Samples are raw microvolts; filtering is never applied on load.
"""

import logging
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DataError,
    IntegrityError,
    LabelRangeError,
    TruncationError,
    VersionMismatchError,
)
from .trials import TrialSet

logger = logging.getLogger(__name__)

MAGIC = b"EEGB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIfIB")


def eegb_bytes(trials: TrialSet) -> bytes:
    names = trials.channel_names
    if trials.n_classes > 0xFFFF:
        raise DataError(f"EEGB stores labels as u16; {trials.n_classes} classes do not fit")
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, trials.n_trials, trials.n_channels, trials.n_samples,
            trials.sample_rate_hz, trials.n_classes, 1 if names else 0,
        )
    ]
    if names:
        for name in names:
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataError(f"channel name too long for EEGB: {name[:32]!r}...")
            parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(trials.labels.astype("<u2").tobytes())
    parts.append(trials.data.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_eegb(trials: TrialSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(eegb_bytes(trials))
    os.replace(tmp, path)
    logger.info("wrote %s (%d trials x %d ch x %d samples)", path, trials.n_trials, trials.n_channels, trials.n_samples)
    return path


def load_eegb(path) -> TrialSet:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise TruncationError(path, _HEADER.size + 4, len(blob))
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: EEGB version {version}, this reader supports {VERSION}")
    if len(blob) < _HEADER.size + 4:
        raise TruncationError(path, _HEADER.size + 4, len(blob))
    _, _, n_trials, n_channels, n_samples, fs, n_classes, has_names = _HEADER.unpack_from(blob, 0)

    offset = _HEADER.size
    names = None
    if has_names:
        names = []
        for _ in range(n_channels):
            if offset + 2 > len(blob):
                raise TruncationError(path, offset + 2, len(blob))
            (n,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            if offset + n > len(blob):
                raise TruncationError(path, offset + n, len(blob))
            try:
                names.append(blob[offset : offset + n].decode("utf-8"))
            except UnicodeDecodeError as e:
                raise IntegrityError(f"{path}: channel name is not valid utf-8") from e
            offset += n

    n_values = n_trials * n_channels * n_samples
    expected = offset + 2 * n_trials + 4 * n_values + 4
    if len(blob) != expected:
        if len(blob) < expected:
            raise TruncationError(path, expected, len(blob))
        raise IntegrityError(f"{path}: {len(blob) - expected} unexpected trailing bytes")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError(f"{path}: CRC32 mismatch, file is corrupted")

    labels = np.frombuffer(blob, dtype="<u2", count=n_trials, offset=offset).astype(np.int64)
    offset += 2 * n_trials
    data = np.frombuffer(blob, dtype="<f4", count=n_values, offset=offset).astype(np.float32)
    if labels.size and labels.max() >= n_classes:
        raise LabelRangeError(f"{path}: label {labels.max()} outside [0, {n_classes})")
    return TrialSet(
        data.reshape(n_trials, n_channels, n_samples), labels, float(fs), int(n_classes), names
    )
