"""Named-array checkpoint format.

A checkpoint is a JSON manifest next to a single binary blob: the manifest
carries the version tag, arbitrary JSON metadata, and one (name, offset,
shape) record per array; the blob is the little-endian float64 payloads
appended in manifest order.  Offsets count elements.  Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CKPT_VERSION = "HPDPCKPT1"


def save_arrays(path, arrays: dict, meta: dict = None):
    """Write ``<path>.json`` and ``<path>.blob``. Returns the JSON path."""
    base = Path(path)
    json_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".blob")

    index = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        index.append({"name": name, "offset": offset,
                      "shape": list(arr.shape)})
        chunks.append(arr.astype("<f8").tobytes(order="C"))
        offset += arr.size
    manifest = {
        "version": CKPT_VERSION,
        "blob": blob_path.name,
        "arrays": index,
        "meta": meta or {},
    }
    blob_path.write_bytes(b"".join(chunks))
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                         + "\n")
    return json_path


def load_arrays(path):
    """Read a checkpoint written by save_arrays. Returns (arrays, meta)."""
    json_path = Path(path)
    if json_path.suffix != ".json":
        json_path = json_path.with_suffix(".json")
    if not json_path.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {json_path}")
    manifest = json.loads(json_path.read_text())
    if manifest.get("version") != CKPT_VERSION:
        raise ValueError(f"{json_path}: unsupported checkpoint version "
                         f"{manifest.get('version')!r}")
    blob = (json_path.parent / manifest["blob"]).read_bytes()
    flat = np.frombuffer(blob, dtype="<f8")
    arrays = {}
    for rec in manifest["arrays"]:
        size = int(np.prod(rec["shape"])) if rec["shape"] else 1
        chunk = flat[rec["offset"]:rec["offset"] + size]
        if chunk.size != size:
            raise ValueError(f"{json_path}: blob truncated at array "
                             f"{rec['name']!r}")
        arrays[rec["name"]] = chunk.reshape(rec["shape"]).astype(np.float64)
    return arrays, manifest.get("meta", {})
