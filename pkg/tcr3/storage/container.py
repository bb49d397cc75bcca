"""
TensorContainer: a flat binary file of named little-endian arrays.

Layout:
    magic "TCR3" | version u16 | entry count u32
    per entry: name length u32 | name UTF-8 | dtype code u8 | ndim u8 |
               dims u64 * ndim | row-major payload
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..errors import ContainerFormatError, InvalidInputError

logger = logging.getLogger(__name__)

MAGIC = b"TCR3"
VERSION = 1

DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
}
DTYPE_CODES = {dtype: code for code, dtype in DTYPES.items()}


def _dtype_code(array: np.ndarray, name: str) -> int:
    for dtype, code in DTYPE_CODES.items():
        if array.dtype.kind == dtype.kind and array.dtype.itemsize == dtype.itemsize:
            return code
    raise InvalidInputError(f"entry {name!r}: dtype {array.dtype} not storable (float32, float64, uint8)")


def encode_container(entries: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, array in entries.items():
        array = np.asarray(array)
        code = _dtype_code(array, name)
        if array.ndim > 255:
            raise InvalidInputError(f"entry {name!r} has too many dimensions")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", code, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=DTYPES[code]).tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise ContainerFormatError(f"truncated container while reading {what} at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(data: bytes) -> Dict[str, np.ndarray]:
    reader = _Reader(data)
    if reader.take(4, "magic") != MAGIC:
        raise ContainerFormatError("not a TCR3 container (bad magic)")
    version, count = reader.unpack("<HI", "header")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported container version {version}")

    entries: Dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = reader.unpack("<I", f"entry {i} name length")
        try:
            name = reader.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise ContainerFormatError(f"entry {i} name is not UTF-8") from e
        if name in entries:
            raise ContainerFormatError(f"duplicate entry name {name!r}")
        code, ndim = reader.unpack("<BB", f"entry {name!r} header")
        if code not in DTYPES:
            raise ContainerFormatError(f"entry {name!r}: unknown dtype code {code}")
        dims = reader.unpack(f"<{ndim}Q", f"entry {name!r} dims")
        dtype = DTYPES[code]
        payload = reader.take(int(np.prod(dims, dtype=np.int64)) * dtype.itemsize, f"entry {name!r} payload")
        entries[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if reader.offset != len(data):
        raise ContainerFormatError(f"{len(data) - reader.offset} trailing bytes after the last entry")
    return entries


def write_container(path: Union[str, Path], entries: Mapping[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(entries))
    logger.debug(f"Wrote {len(entries)} entries to {path}")


def read_container(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ContainerFormatError(f"container not found: {path}")
    return decode_container(path.read_bytes())
