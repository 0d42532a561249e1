"""Binary container used by index and model checkpoints.

Layout: 4-byte magic, little-endian uint32 format version, little-endian
uint64 header length, a JSON header (sorted keys, compact separators), then
the raw array payloads in header-manifest order. Arrays are written as
little-endian float64 or int64, so a write -> read round trip is bit-exact
and repeated writes of the same data produce identical bytes.
"""

import json
import struct

import numpy as np

_DTYPE_TAGS = {"f8": "<f8", "i8": "<i8"}


def _dtype_tag(arr):
    if arr.dtype == np.float64:
        return "f8"
    if arr.dtype == np.int64:
        return "i8"
    raise ValueError(f"unsupported array dtype {arr.dtype}; use float64 or int64")


def write_container(path, magic, version, meta, arrays):
    """Write `meta` (JSON-serializable) plus named arrays to `path`.

    arrays: ordered sequence of (name, ndarray) pairs; float64/int64 only.
    """
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    manifest = []
    payloads = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        tag = _dtype_tag(arr)
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        payloads.append(arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes())
    header = {"meta": meta, "arrays": manifest}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", version))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in payloads:
            fh.write(chunk)


def read_container(path, magic, expect_version=None):
    """Read a container written by write_container.

    Returns (version, meta, dict name -> ndarray).
    """
    with open(path, "rb") as fh:
        got = fh.read(4)
        if got != magic:
            raise ValueError(f"{path}: bad magic {got!r}, expected {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if expect_version is not None and version != expect_version:
            raise ValueError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(_DTYPE_TAGS[entry["dtype"]])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"{path}: truncated payload for array {entry['name']!r}")
            arr = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"])
            arrays[entry["name"]] = arr.copy()  # writable, native layout
    return version, header["meta"], arrays
