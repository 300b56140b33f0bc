"""Binary checkpoint format.

Layout::

    b"MIROCKPT"            8-byte magic
    uint32 (LE)            header length n
    n bytes                UTF-8 JSON: {"arrays": [{"name", "shape", "offset"}], "meta": {...}}
    payload                raw little-endian float32 values, concatenated

Values are stored as float32, so a save/load/save cycle is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import ParamSet

MAGIC = b"MIROCKPT"


class CheckpointError(ValueError):
    pass


def to_bytes(params, meta=None):
    entries, chunks, offset = [], [], 0
    for name in params.names():
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def from_bytes(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + n].decode())
    payload = blob[12 + n:]
    params = ParamSet()
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"])
        params.add(e["name"], arr.reshape(e["shape"]).astype(np.float64))
    return params, header.get("meta", {})


def save_checkpoint(path, params, meta=None):
    blob = to_bytes(params, meta)
    Path(path).write_bytes(blob)
    return blob


def load_checkpoint(path, into=None):
    """Read a checkpoint; with ``into``, copy values into that ParamSet.

    Loading into a ParamSet whose names or shapes differ is rejected.
    """
    loaded, meta = from_bytes(Path(path).read_bytes())
    if into is None:
        return loaded, meta
    if set(loaded.names()) != set(into.names()):
        missing = set(into.names()) ^ set(loaded.names())
        raise CheckpointError(f"parameter names differ: {sorted(missing)[:5]}")
    for name in into.names():
        if loaded[name].shape != into[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {loaded[name].shape}, model {into[name].shape}")
        into[name] = loaded[name]
    return into, meta
