"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   7 bytes  b"AWDLM01"
    u32     format version (1)
    u32+    config text (length-prefixed utf-8, canonical key = value lines)
    u32     parameter count, then per parameter:
                u16+ name, u8 dtype code (4=float32, 8=float64),
                u8 ndim, u32 per dim, raw row-major bytes
    u64     k (SGD steps), u64 t (validation checks), u64 trigger step
    u8      triggered flag, u64 averaged-iterate count
    u32     validation log length, then f64 per entry
    u8      iterate-sum flag, then (if set) the same record layout as the
            parameter block
    u32+    rng state (length-prefixed canonical JSON)
    u32     crc32 of everything above

A truncated or corrupted file fails loading before any state is handed back;
save -> load -> save is byte-identical.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .optim import TrainerState

MAGIC = b"AWDLM01"
VERSION = 1
_DTYPE_CODES = {4: np.dtype(np.float32), 8: np.dtype(np.float64)}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config_text: str
    params: dict[str, np.ndarray]
    state: TrainerState = field(default_factory=TrainerState)
    rng_state: dict = field(default_factory=dict)
    version: int = VERSION


def _pack_str(out: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    out += struct.pack("<I", len(b))
    out += b


def _pack_name(out: bytearray, s: str) -> None:
    b = s.encode("utf-8")
    out += struct.pack("<H", len(b))
    out += b


def _pack_array(out: bytearray, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODE_FOR_DTYPE:
        raise CheckpointError(f"cannot store array {name!r} of dtype {arr.dtype}")
    _pack_name(out, name)
    out += struct.pack("<BB", _CODE_FOR_DTYPE[arr.dtype], arr.ndim)
    for d in arr.shape:
        out += struct.pack("<I", d)
    out += arr.tobytes()


def serialize(ckpt: Checkpoint) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", ckpt.version)
    _pack_str(out, ckpt.config_text)
    out += struct.pack("<I", len(ckpt.params))
    for name, arr in ckpt.params.items():
        _pack_array(out, name, arr)
    st = ckpt.state
    out += struct.pack("<QQQBQ", st.k, st.t, st.trigger_step, int(st.triggered), st.avg_count)
    out += struct.pack("<I", len(st.logs))
    for v in st.logs:
        out += struct.pack("<d", v)
    if st.iterate_sum is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<I", len(st.iterate_sum))
        for name, arr in st.iterate_sum.items():
            _pack_array(out, name, arr)
    _pack_str(out, json.dumps(ckpt.rng_state, sort_keys=True))
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    blob = serialize(ckpt)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: needed {size} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}")
        vals = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}")
        b = self.blob[self.pos:self.pos + n]
        self.pos += n
        return b

    def take_str(self) -> str:
        return self.take_bytes(self.take("<I")).decode("utf-8")

    def take_name(self) -> str:
        return self.take_bytes(self.take("<H")).decode("utf-8")

    def take_array(self) -> tuple[str, np.ndarray]:
        name = self.take_name()
        code, ndim = self.take("<BB")
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"unknown dtype code {code} for array {name!r}")
        dims = tuple(self.take("<I") for _ in range(ndim))
        dtype = _DTYPE_CODES[code]
        count = 1
        for d in dims:
            count *= d
        raw = self.take_bytes(count * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
        return name, arr


def deserialize(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"file too short to be a checkpoint ({len(blob)} bytes)")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[:-4])
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"checksum mismatch: stored {stored_crc:#x}, computed {actual_crc:#x}")

    r = _Reader(blob[:-4])
    r.pos = len(MAGIC)
    version = r.take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_text = r.take_str()
    n_params = r.take("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        name, arr = r.take_array()
        params[name] = arr
    k, t, trigger_step, triggered, avg_count = r.take("<QQQBQ")
    n_logs = r.take("<I")
    logs = [r.take("<d") for _ in range(n_logs)]
    iterate_sum = None
    if r.take("<B"):
        n_sum = r.take("<I")
        iterate_sum = {}
        for _ in range(n_sum):
            name, arr = r.take_array()
            iterate_sum[name] = arr
    rng_state = json.loads(r.take_str())
    if r.pos != len(r.blob):
        raise CheckpointError(f"{len(r.blob) - r.pos} trailing bytes after checkpoint body")
    state = TrainerState(k=k, t=t, trigger_step=trigger_step, triggered=bool(triggered),
                         logs=logs, iterate_sum=iterate_sum, avg_count=avg_count)
    return Checkpoint(config_text=config_text, params=params, state=state,
                      rng_state=rng_state, version=version)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    return deserialize(blob)
