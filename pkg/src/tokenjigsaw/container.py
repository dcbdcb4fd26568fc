"""Self-describing binary container: magic, JSON header, little-endian arrays.

Layout::

    8 bytes   magic (e.g. b"PZCB\\x00\\x01\\x00\\x00")
    8 bytes   header length L, uint64 little-endian
    L bytes   UTF-8 JSON header (sorted keys)
    ...       array blobs, each little-endian, in header order

The header carries ``"endianness": "little"`` and an ``arrays`` list of
``{name, dtype, shape, offset, nbytes}`` records; offsets are relative to the
start of the blob section.
"""
import hashlib
import json
import struct

import numpy as np


class ContainerError(ValueError):
    pass


def _le(dtype):
    return np.dtype(dtype).newbyteorder("<")


def dumps(magic, meta, arrays):
    if len(magic) != 8:
        raise ContainerError("magic must be 8 bytes")
    records, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(_le(arr.dtype), copy=False)
        raw = le.tobytes()
        records.append({
            "name": name,
            "dtype": np.dtype(arr.dtype).str.lstrip("<>|="),
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = dict(meta)
    header["endianness"] = "little"
    header["arrays"] = records
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(blobs)


def loads(raw, magic):
    if raw[:8] != magic:
        raise ContainerError(f"bad magic {raw[:8]!r}, expected {magic!r}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("endianness") != "little":
        raise ContainerError("unsupported endianness")
    base = 16 + hlen
    arrays = {}
    for rec in header.pop("arrays"):
        dt = _le(rec["dtype"])
        start = base + rec["offset"]
        buf = raw[start:start + rec["nbytes"]]
        if len(buf) != rec["nbytes"]:
            raise ContainerError(f"truncated array {rec['name']}")
        arr = np.frombuffer(buf, dtype=dt).reshape(rec["shape"])
        arrays[rec["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    header.pop("endianness")
    return header, arrays


def write(path, magic, meta, arrays):
    raw = dumps(magic, meta, arrays)
    with open(path, "wb") as fh:
        fh.write(raw)
    return hashlib.sha256(raw).hexdigest()


def read(path, magic):
    with open(path, "rb") as fh:
        return loads(fh.read(), magic)


def digest_bytes(raw):
    return hashlib.sha256(raw).hexdigest()


def digest_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
