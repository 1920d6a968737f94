"""On-disk tensor bundles.

A bundle is a directory with two files:

``manifest.json``
    ``{"format": "tailquant-bundle", "version": 1, "entries": [...], "metadata": {...}}``
    where each entry is ``{"name", "dtype": "f32", "shape", "offset", "nbytes",
    "checksum"}``. Keys are sorted and the document is indented by two spaces.
``data.bin``
    every tensor, in entry order, as row-major little-endian float32.

Tensors are computed in float64 and stored in float32; reading widens them
back to float64, so write -> read -> write is byte-identical. ``checksum`` is
the 64-bit BLAKE2b digest (16 hex digits) of the entry's bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleError, ChecksumError

FORMAT = "tailquant-bundle"
VERSION = 1
MANIFEST = "manifest.json"
DATA = "data.bin"
_LE_F32 = np.dtype("<f4")


def checksum(buf: bytes) -> str:
    return hashlib.blake2b(buf, digest_size=8).hexdigest()


def atomic_write(path, data: bytes | str) -> None:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


@dataclass
class TensorBundle:
    tensors: dict = field(default_factory=dict)  # name -> float64 array
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self, prefix: str = "") -> list:
        return [n for n in self.tensors if n.startswith(prefix)]


# ---------------------------------------------------------------------------
# Write / read
# ---------------------------------------------------------------------------

def write_bundle(path, bundle: TensorBundle) -> None:
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in bundle.tensors.items():
        a = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise BundleError(f"tensor {name!r} has non-finite values")
        raw = np.ascontiguousarray(a.astype(_LE_F32)).tobytes()
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape), "offset": offset,
                        "nbytes": len(raw), "checksum": checksum(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "version": VERSION, "entries": entries, "metadata": bundle.metadata}
    path.mkdir(parents=True, exist_ok=True)
    atomic_write(path / DATA, b"".join(chunks))
    atomic_write(path / MANIFEST, dumps_json(manifest))


def read_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no bundle manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise BundleError(f"{mpath}: invalid JSON ({e})") from e
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise BundleError(f"{mpath}: not a {FORMAT} v{VERSION} manifest")
    return manifest


def read_bundle(path) -> TensorBundle:
    path = Path(path)
    manifest = read_manifest(path)
    dpath = path / DATA
    if not dpath.is_file():
        raise FileNotFoundError(f"no bundle payload at {dpath}")
    data = dpath.read_bytes()
    tensors = {}
    for e in manifest["entries"]:
        try:
            name, shape, off, nbytes = e["name"], tuple(e["shape"]), e["offset"], e["nbytes"]
        except KeyError as k:
            raise BundleError(f"manifest entry missing {k}") from None
        if e.get("dtype") != "f32":
            raise BundleError(f"{name}: unsupported dtype {e.get('dtype')!r}")
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise BundleError(f"{name}: {nbytes} bytes do not match shape {list(shape)}")
        if off < 0 or off + nbytes > len(data):
            raise BundleError(f"{name}: byte range [{off}, {off + nbytes}) outside payload")
        raw = data[off:off + nbytes]
        if checksum(raw) != e.get("checksum"):
            raise ChecksumError(f"{name}: checksum mismatch in {path}")
        tensors[name] = np.frombuffer(raw, dtype=_LE_F32).astype(np.float64).reshape(shape)
    return TensorBundle(tensors, manifest.get("metadata", {}))
