"""Writers for the shared binary feature interchange formats.

Feature file: magic PHFV, version u16, record count u64, dimension u32, then
per record a photo id (u16 length + UTF-8) and dimension float32 values.
Raw-map file: magic PHFM, version u16, then per record the photo id, layer
u16, C u32, M u32, and C*M float32 values. Everything is little-endian;
feature records are sorted by id.
"""

import struct
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"PHFV"
MAP_MAGIC = b"PHFM"
FORMAT_VERSION = 1


def _encode_id(photo_id):
    encoded = str(photo_id).encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError(f"photo id too long to encode: {photo_id[:32]!r}...")
    return struct.pack("<H", len(encoded)) + encoded


def feature_file_bytes(vectors):
    """Serialize {photo_id: 1-D float array} as a feature file."""
    ids = sorted(vectors)
    dims = {np.asarray(vectors[i]).shape[0] for i in ids} or {0}
    if len(dims) != 1:
        raise ValueError(f"vectors mix dimensions {sorted(dims)}")
    (dim,) = dims
    out = bytearray()
    out += FEATURE_MAGIC
    out += struct.pack("<HQI", FORMAT_VERSION, len(ids), dim)
    for photo_id in ids:
        out += _encode_id(photo_id)
        out += np.ascontiguousarray(vectors[photo_id], dtype="<f4").tobytes()
    return bytes(out)


def map_file_bytes(records):
    """Serialize (photo_id, layer_index, C x M float array) triples as a raw-map file."""
    out = bytearray()
    out += MAP_MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    for photo_id, layer_index, data in records:
        data = np.asarray(data, dtype="<f4")
        if data.ndim != 2:
            raise ValueError(f"map for {photo_id!r} must be 2-D, got shape {data.shape}")
        out += _encode_id(photo_id)
        out += struct.pack("<HII", layer_index, data.shape[0], data.shape[1])
        out += np.ascontiguousarray(data).tobytes()
    return bytes(out)


def write_atomic(path, payload):
    """Write bytes via a sibling temp file so failures leave no partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)
