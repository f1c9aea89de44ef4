"""Named-tensor file container.

Layout (all integers little-endian):

    magic   4 bytes  b"VEMT"
    version 1 byte   1 or 2
    [v2 only] u32 json_len, then json_len bytes of UTF-8 JSON metadata
    entries until EOF, each:
        u32 name_len, name_len bytes UTF-8 name
        u32 rank
        rank * u32 dims
        prod(dims) float32 payload

Version 1 files have no metadata block; readers return {} for them.
Writers emit v1 when `meta` is falsy so old readers stay compatible.
Tensors are stored float32; save() casts, load() returns float32 arrays.
"""

import json
import struct

import numpy as np

from .errors import DataError

_MAGIC = b"VEMT"


def save_tensors(path, tensors, meta=None):
    """Write a {name: array} dict; entries land sorted by name so equal
    contents give byte-identical files regardless of insertion order."""
    version = 2 if meta else 1
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", version))
        if version == 2:
            blob = json.dumps(meta, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
        for name in sorted(tensors):
            arr = tensors[name]
            arr = np.asarray(arr, dtype=np.float32)  # tobytes() emits C order
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"truncated container: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def load_tensors(path):
    """Read a container; returns (tensors dict, metadata dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataError(f"bad magic {magic!r}, not a tensor container")
        (version,) = struct.unpack("<B", _read_exact(fh, 1, "version"))
        if version not in (1, 2):
            raise DataError(f"unsupported container version {version}")
        meta = {}
        if version == 2:
            (jlen,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
            try:
                meta = json.loads(_read_exact(fh, jlen, "metadata").decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise DataError(f"corrupt metadata block: {exc}") from exc
        tensors = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise DataError("truncated container: partial entry header")
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(fh, nlen, "entry name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name!r}"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"dims of {name!r}"))
            count = 1
            for d in dims:
                count *= d
            payload = _read_exact(fh, 4 * count, f"payload of {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        return tensors, meta
