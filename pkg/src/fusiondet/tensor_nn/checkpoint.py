"""Checkpoint files: a text header followed by packed little-endian float32.

Layout::

    FUSIONDET-CHECKPOINT 1
    header-bytes <n>
    <n bytes of JSON: {"meta": ..., "tensors": [{"name", "shape", "offset"}, ...]}>
    <float32 data>
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import DataError

MAGIC = b"FUSIONDET-CHECKPOINT 1\n"


def dumps(params: dict, meta: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"meta": meta or {}, "tensors": entries}, indent=1, sort_keys=True).encode() + b"\n"
    return MAGIC + b"header-bytes %d\n" % len(header) + header + b"".join(chunks)


def loads(blob: bytes):
    if not blob.startswith(MAGIC):
        raise DataError("not a checkpoint file (bad magic line)")
    rest = blob[len(MAGIC):]
    line, _, rest = rest.partition(b"\n")
    if not line.startswith(b"header-bytes "):
        raise DataError("missing header-bytes line")
    n = int(line.split()[1])
    header = json.loads(rest[:n])
    data = rest[n:]
    params = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        end = e["offset"] + 4 * count
        if end > len(data):
            raise DataError(f"tensor {e['name']} runs past the end of the file")
        params[e["name"]] = np.frombuffer(data[e["offset"]:end], dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return params, header["meta"]


def save(path, params: dict, meta: dict | None = None):
    with open(path, "wb") as fh:
        fh.write(dumps(params, meta))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
