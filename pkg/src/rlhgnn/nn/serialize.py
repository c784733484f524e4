"""Flat binary parameter format.

Layout (all integers unsigned 32-bit little-endian)::

    magic      8 bytes   b"RLHGPAR\\0"
    version    u32       FORMAT_VERSION
    header_len u32       length of the UTF-8 JSON header that follows
    header     bytes     free-form metadata (model config, structure id, ...)
    count      u32       number of entries
    entry*     name_len u32, name (UTF-8), rank u32, dims u32 * rank,
               values float32 little-endian, row-major
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..exceptions import ArtifactError

MAGIC = b"RLHGPAR\0"
FORMAT_VERSION = 1


def dump_params(params: dict[str, np.ndarray], header: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    hdr = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hdr)))
    buf.write(hdr)
    buf.write(struct.pack("<I", len(params)))
    for name, value in params.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ArtifactError("parameter blob is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count != 1 else vals[0]


def load_params(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ArtifactError("not a parameter blob (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported parameter format version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"corrupt parameter header: {exc}") from None
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32(rank)) if rank > 1 else ((r.u32(),) if rank == 1 else ())
        count = int(np.prod(dims)) if dims else 1
        params[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).copy()
    if r.pos != len(data):
        raise ArtifactError("trailing bytes after parameter entries")
    return params, header
