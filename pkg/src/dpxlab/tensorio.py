"""Binary tensor container and the experiment manifest.

Every artifact that crosses a process boundary (trained weights, activations,
attribution maps, predictions) travels in one self-describing binary format so
that independently written producers and consumers can interoperate:

    bytes 0..3    magic ``DPXT``
    byte  4       format version (``0x01``)
    byte  5       dtype code (``0x01`` float32, ``0x02`` float64)
    byte  6       rank
    bytes 7..13   reserved, must be zero
    then rank unsigned 64-bit little-endian dims
    then the payload, row-major, little-endian

NaN and Inf payloads are rejected at both ends; a value that survives a
write/read round trip is bit-identical to what went in.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptError,
    FormatError,
    ManifestError,
    UnsupportedError,
)

MAGIC = b"DPXT"
VERSION = 0x01
HEADER_LEN = 14

_DTYPE_CODES = {np.dtype("<f4"): 0x01, np.dtype("<f8"): 0x02}
_CODE_DTYPES = {0x01: np.dtype("<f4"), 0x02: np.dtype("<f8")}

ROLES = ("input", "activation", "attribution", "prediction", "label")


def tensor_bytes(t: np.ndarray) -> bytes:
    """Serialize an array to container bytes.

    Accepts float32 or float64 input; anything else must be converted by the
    caller so that no silent precision change happens here.
    """
    arr = np.asarray(t)
    if arr.dtype not in _DTYPE_CODES:
        raise UnsupportedError(f"dtype {arr.dtype} not supported; use float32 or float64")
    if not np.all(np.isfinite(arr)):
        raise CorruptError("refusing to write non-finite payload")
    header = MAGIC + bytes([VERSION, _DTYPE_CODES[arr.dtype], arr.ndim]) + b"\x00" * 7
    dims = b"".join(struct.pack("<Q", d) for d in arr.shape)
    return header + dims + arr.tobytes(order="C")


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    """Write an array to ``path``, atomically (temp file + rename)."""
    payload = tensor_bytes(t)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    """Parse container bytes; returns a read-only array in the stored dtype."""
    if len(raw) < HEADER_LEN:
        raise FormatError("stream shorter than the fixed header")
    if raw[:4] != MAGIC:
        raise FormatError("bad magic")
    version, dtype_code, rank = raw[4], raw[5], raw[6]
    if version != VERSION:
        raise UnsupportedError(f"container version {version} not supported")
    if dtype_code not in _CODE_DTYPES:
        raise UnsupportedError(f"dtype code {dtype_code:#04x} not supported")
    if any(raw[7:HEADER_LEN]):
        raise CorruptError("reserved header bytes not zero")
    dims_end = HEADER_LEN + 8 * rank
    if len(raw) < dims_end:
        raise CorruptError("truncated dim list")
    dims = struct.unpack(f"<{rank}Q", raw[HEADER_LEN:dims_end]) if rank else ()
    dtype = _CODE_DTYPES[dtype_code]
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + count * dtype.itemsize
    if len(raw) != expected:
        raise CorruptError(f"payload size mismatch: have {len(raw)} bytes, header implies {expected}")
    arr = np.frombuffer(raw[dims_end:], dtype=dtype).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise CorruptError("non-finite payload")
    arr.flags.writeable = False
    return arr


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


@dataclass(frozen=True)
class ManifestEntry:
    """One named artifact inside an experiment workspace."""

    logical_name: str
    file_path: str
    role: str
    model_id: str
    layer_id: str | None = None
    explainer_id: str | None = None
    epsilon: float | None = None

    def to_json(self) -> dict:
        out = {
            "logical_name": self.logical_name,
            "file_path": self.file_path,
            "role": self.role,
            "model_id": self.model_id,
        }
        if self.layer_id is not None:
            out["layer_id"] = self.layer_id
        if self.explainer_id is not None:
            out["explainer_id"] = self.explainer_id
        if self.epsilon is not None:
            out["epsilon"] = self.epsilon
        return out


@dataclass
class Manifest:
    """Validated collection of manifest entries plus their base directory.

    ``base_dir`` anchors the relative ``file_path`` of each entry, so a
    manifest can be moved together with its tensor files.
    """

    entries: list[ManifestEntry] = field(default_factory=list)
    base_dir: str = "."

    def __post_init__(self):
        seen: set[str] = set()
        eps_by_model: dict[str, float | None] = {}
        for e in self.entries:
            if not isinstance(e.logical_name, str) or not e.logical_name:
                raise ManifestError(f"entry {e!r}: logical_name must be a non-empty string")
            if e.logical_name in seen:
                raise ManifestError(f"entry '{e.logical_name}': duplicate logical_name")
            seen.add(e.logical_name)
            if e.role not in ROLES:
                raise ManifestError(f"entry '{e.logical_name}': unknown role '{e.role}'")
            if not e.file_path:
                raise ManifestError(f"entry '{e.logical_name}': empty file_path")
            if not e.model_id:
                raise ManifestError(f"entry '{e.logical_name}': empty model_id")
            if e.epsilon is not None and not (isinstance(e.epsilon, (int, float)) and e.epsilon > 0):
                raise ManifestError(f"entry '{e.logical_name}': epsilon must be a positive number")
            # A model is either private (one epsilon everywhere) or not.
            if e.model_id in eps_by_model:
                if eps_by_model[e.model_id] != e.epsilon:
                    raise ManifestError(
                        f"entry '{e.logical_name}': epsilon {e.epsilon!r} disagrees with "
                        f"earlier entries for model '{e.model_id}' ({eps_by_model[e.model_id]!r})"
                    )
            else:
                eps_by_model[e.model_id] = e.epsilon

    def find(
        self,
        role: str | None = None,
        model_id: str | None = None,
        explainer_id: str | None = None,
        layer_id: str | None = None,
    ) -> list[ManifestEntry]:
        out = []
        for e in self.entries:
            if role is not None and e.role != role:
                continue
            if model_id is not None and e.model_id != model_id:
                continue
            if explainer_id is not None and e.explainer_id != explainer_id:
                continue
            if layer_id is not None and e.layer_id != layer_id:
                continue
            out.append(e)
        return out

    def get(self, logical_name: str) -> ManifestEntry:
        for e in self.entries:
            if e.logical_name == logical_name:
                return e
        raise ManifestError(f"entry '{logical_name}': not present in manifest")

    def load(self, logical_name: str) -> np.ndarray:
        entry = self.get(logical_name)
        return read_tensor(os.path.join(self.base_dir, entry.file_path))

    def model_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.model_id, None)
        return list(seen)

    def epsilon_of(self, model_id: str) -> float | None:
        for e in self.entries:
            if e.model_id == model_id:
                return e.epsilon
        raise ManifestError(f"no entries for model '{model_id}'")


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Load and fully validate a manifest; any violation names the entry."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError("manifest must be a JSON object with an 'entries' list")
    entries = []
    known = {"logical_name", "file_path", "role", "model_id", "layer_id", "explainer_id", "epsilon"}
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict):
            raise ManifestError(f"entry #{i}: not a JSON object")
        extra = set(raw) - known
        if extra:
            raise ManifestError(f"entry #{i} ('{raw.get('logical_name', '?')}'): unknown keys {sorted(extra)}")
        missing = {"logical_name", "file_path", "role", "model_id"} - set(raw)
        if missing:
            raise ManifestError(f"entry #{i} ('{raw.get('logical_name', '?')}'): missing keys {sorted(missing)}")
        entries.append(ManifestEntry(**raw))
    return Manifest(entries=entries, base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    doc = {"entries": [e.to_json() for e in manifest.entries]}
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")
    os.replace(tmp, path)
