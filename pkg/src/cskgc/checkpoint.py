"""Binary checkpoints: magic, version, JSON metadata, f32 payload, CRC32.

Layout (little-endian)::

    b"KGCE" | u32 version | u64 metadata length | metadata (UTF-8 JSON, sorted keys)
    | payload (f32 blocks, in metadata order) | u32 CRC32 of payload
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .ioutil import atomic_write_bytes
from .scorers import BLOCKS, Mode, ModelKind, ModelState
from .training import TrainConfig

MAGIC = b"KGCE"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def encode_checkpoint(state: ModelState, config: dict | None = None) -> bytes:
    blocks, chunks, offset = [], [], 0
    for name in BLOCKS:
        arr = getattr(state, name)
        if arr is None:
            continue
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        blocks.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    meta = {
        "blocks": blocks,
        "config": config or {},
        "d_c": state.d_c,
        "d_e": state.d_e,
        "mode": state.mode.value,
        "model_kind": state.model_kind.value,
        "n_entities": state.n_entities,
        "n_relations": state.n_relations,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)
    return (_HEADER.pack(MAGIC, VERSION, len(meta_bytes)) + meta_bytes + payload
            + struct.pack("<I", zlib.crc32(payload)))


def decode_checkpoint(raw: bytes) -> tuple[ModelState, dict]:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    if len(raw) < _HEADER.size:
        raise TruncatedCheckpointError("truncated header")
    _, version, meta_len = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    meta_end = _HEADER.size + meta_len
    if len(raw) < meta_end:
        raise TruncatedCheckpointError("truncated metadata")
    try:
        meta = json.loads(raw[_HEADER.size:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata: {exc}") from exc
    payload_len = sum(b["nbytes"] for b in meta["blocks"])
    if len(raw) < meta_end + payload_len + 4:
        raise TruncatedCheckpointError("truncated payload")
    if len(raw) > meta_end + payload_len + 4:
        raise CheckpointError("trailing bytes after checksum")
    payload = raw[meta_end:meta_end + payload_len]
    (crc,) = struct.unpack_from("<I", raw, meta_end + payload_len)
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload checksum mismatch")
    arrays = {name: None for name in BLOCKS}
    for b in meta["blocks"]:
        chunk = payload[b["offset"]:b["offset"] + b["nbytes"]]
        arrays[b["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(b["shape"]).astype(np.float64)
    state = ModelState(
        model_kind=ModelKind(meta["model_kind"]), mode=Mode(meta["mode"]),
        d_e=meta["d_e"], d_c=meta["d_c"], **arrays,
    )
    return state, meta["config"]


def save_checkpoint(state: ModelState, cfg: TrainConfig | None, path) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(state, cfg.to_dict() if cfg is not None else None))
    return path


def load_checkpoint(path) -> tuple[ModelState, TrainConfig | None]:
    """Return ``(state, config)``; parameters come back as float64 copies of the stored f32 values."""
    state, config = decode_checkpoint(Path(path).read_bytes())
    return state, (TrainConfig.from_dict(config) if config else None)
