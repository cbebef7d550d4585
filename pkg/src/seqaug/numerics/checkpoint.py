"""Single-file checkpoint format: JSON manifest + raw little-endian arrays.

Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON
manifest, then the concatenated array buffers. Reload is bit-exact.
"""

import json

import numpy as np

MAGIC = b"SQAGCKP1"


def save_checkpoint(path, arrays, meta=None):
    """Write named arrays (dict name -> ndarray) plus an optional meta dict."""
    entries = []
    offset = 0
    buffers = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        buf = np.ascontiguousarray(le).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.newbyteorder("<").str,
            "offset": offset,
            "nbytes": len(buf),
        })
        buffers.append(buf)
        offset += len(buf)
    manifest = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(manifest), dtype="<u8").tobytes())
        f.write(manifest)
        for buf in buffers:
            f.write(buf)


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays: dict name -> ndarray, meta: dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (mlen,) = np.frombuffer(f.read(8), dtype="<u8")
        manifest = json.loads(f.read(int(mlen)).decode("utf-8"))
        blob = f.read()
    arrays = {}
    for e in manifest["arrays"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.copy()
    return arrays, manifest["meta"]
