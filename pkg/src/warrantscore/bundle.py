"""Portable named-array weight bundles (".swb").

Layout: bytes 0-3 are the magic "SWB1" (format version 1); bytes 4-7 an
unsigned 32-bit little-endian header length L; the next L bytes a UTF-8
text header with one line per array, ``<name> <d0,d1,...> f32``; then the
raw payload: each array's elements row-major as little-endian 32-bit
floats, concatenated in header order with no padding.

Arrays are stored at 32-bit precision regardless of in-memory dtype.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SWB1"
ELEM_TYPE = "f32"


class BundleError(ValueError):
    """Malformed or inconsistent weight bundle."""


def write_bundle(path, arrays: dict[str, np.ndarray]):
    """Write named arrays in dict order; names must be space-free."""
    header_lines = []
    payloads = []
    for name, arr in arrays.items():
        if " " in name or "\n" in name or not name:
            raise BundleError(f"invalid array name {name!r}")
        a = np.ascontiguousarray(arr, dtype="<f4")
        shape = ",".join(str(d) for d in a.shape) or "1"
        header_lines.append(f"{name} {shape} {ELEM_TYPE}")
        payloads.append(a.tobytes())
    header = ("\n".join(header_lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def read_bundle(path) -> dict[str, np.ndarray]:
    """Read a bundle back into float32 arrays in header order."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:3] != MAGIC[:3]:
        raise BundleError(f"{path}: bad magic")
    if raw[3:4] != MAGIC[3:4]:
        raise BundleError(
            f"{path}: version mismatch: got {raw[:4]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if 8 + header_len > len(raw):
        raise BundleError(f"{path}: truncated header")
    header = raw[8:8 + header_len].decode("utf-8")

    entries = []
    for line in header.splitlines():
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != 3:
            raise BundleError(f"{path}: malformed header line {line!r}")
        name, shape_text, elem = fields
        if elem != ELEM_TYPE:
            raise BundleError(f"{path}: unsupported element type {elem!r}")
        try:
            shape = tuple(int(d) for d in shape_text.split(","))
        except ValueError:
            raise BundleError(
                f"{path}: malformed shape {shape_text!r} for {name!r}") from None
        if any(d < 0 for d in shape):
            raise BundleError(f"{path}: negative dimension for {name!r}")
        entries.append((name, shape))

    arrays: dict[str, np.ndarray] = {}
    offset = 8 + header_len
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if offset + nbytes > len(raw):
            raise BundleError(
                f"{path}: truncated payload: {name!r} declares shape {shape} "
                f"but only {len(raw) - offset} bytes remain")
        arrays[name] = np.frombuffer(
            raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise BundleError(
            f"{path}: payload has {len(raw) - offset} trailing bytes "
            "beyond the declared arrays")
    return arrays
