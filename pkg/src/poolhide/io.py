"""Bit-exact file formats for models, pools, tensors and keys.

Binary layout (all integers little-endian)::

    b"MTRK1"
    u32   header length
    bytes UTF-8 JSON header, sorted keys
    f64[] payload: weight, bias, scale arrays (or one tensor) in canonical order
    u64   BLAKE2b-64 digest of the payload
"""

import hashlib
import json
import struct

import numpy as np

from .nn import KINDS, Model, arch_spec
from .parampool import ParamPool, SecretKey

MAGIC = b"MTRK1"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _checksum(payload):
    return struct.unpack("<Q", hashlib.blake2b(payload, digest_size=8).digest())[0]


def _pack(header, arrays):
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + struct.pack("<I", len(head)) + head + payload + struct.pack("<Q", _checksum(payload))


def _unpack(blob):
    if not blob.startswith(MAGIC):
        raise FormatError("bad magic; not an MTRK1 file")
    try:
        (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
        start = len(MAGIC) + 4
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.get('format_version')}")
    payload = blob[start + hlen:-8]
    if len(blob) < start + hlen + 8 or len(payload) % 8:
        raise FormatError("truncated payload")
    (stored,) = struct.unpack("<Q", blob[-8:])
    if stored != _checksum(payload):
        raise FormatError("checksum mismatch")
    return header, np.frombuffer(payload, dtype="<f8").astype(np.float64)


def _split(flat, counts):
    if flat.size != sum(counts):
        raise FormatError(f"payload holds {flat.size} values, header declares {sum(counts)}")
    out, start = [], 0
    for c in counts:
        out.append(flat[start:start + c].copy())
        start += c
    return out


def dumps_model(model):
    counts = [model.params[k].size for k in KINDS]
    header = {"format_version": FORMAT_VERSION, "type": "model", "arch": model.spec.arch_id, "counts": counts}
    return _pack(header, [model.params[k] for k in KINDS])


def loads_model(blob):
    header, flat = _unpack(blob)
    if header.get("type") != "model":
        raise FormatError(f"expected a model file, got {header.get('type')!r}")
    try:
        spec = arch_spec(header["arch"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad architecture in header: {exc}") from None
    arrays = _split(flat, header["counts"])
    try:
        return Model(spec, dict(zip(KINDS, arrays)))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def dumps_pool(pool):
    header = {"format_version": FORMAT_VERSION, "type": "pool", "sizes": list(pool.sizes)}
    return _pack(header, [pool.groups[k] for k in KINDS])


def loads_pool(blob):
    header, flat = _unpack(blob)
    if header.get("type") != "pool":
        raise FormatError(f"expected a pool file, got {header.get('type')!r}")
    arrays = _split(flat, header["sizes"])
    try:
        return ParamPool(dict(zip(KINDS, arrays)))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def dumps_tensor(arr, shape=None):
    """A 2-D (rows x dim) tensor, with an optional per-row shape tag."""
    arr = np.asarray(arr, dtype=np.float64)
    header = {"format_version": FORMAT_VERSION, "type": "tensor", "rows": arr.shape[0],
              "dim": arr.shape[1], "shape": list(shape) if shape else None}
    return _pack(header, [arr.ravel()])


def loads_tensor(blob):
    header, flat = _unpack(blob)
    if header.get("type") != "tensor":
        raise FormatError(f"expected a tensor file, got {header.get('type')!r}")
    rows, dim = header["rows"], header["dim"]
    if flat.size != rows * dim:
        raise FormatError("tensor payload does not match its header")
    shape = tuple(header["shape"]) if header.get("shape") else None
    return flat.reshape(rows, dim), shape


def _write(path, blob):
    with open(path, "wb") as fh:
        fh.write(blob)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def save_model(path, model):
    _write(path, dumps_model(model))


def load_model(path):
    return loads_model(_read(path))


def save_pool(path, pool):
    _write(path, dumps_pool(pool))


def load_pool(path):
    return loads_pool(_read(path))


def save_tensor(path, arr, shape=None):
    _write(path, dumps_tensor(arr, shape))


def load_tensor(path):
    return loads_tensor(_read(path))


def save_key(path, key):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(key.to_text())


def load_key(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return SecretKey.from_text(text)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
