"""
Binary weight file format.

Layout, all little-endian:
  magic "NETI" | version u32 | section count u32
  per section: name length u16 | name bytes | rank u8 | dims u32 x rank | payload f32
  trailing SHA-256 of every byte before it
"""
import hashlib
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Mapping, Optional, Tuple, Union

import numpy as np

from config.errors import BadMagicError, ChecksumError, TruncatedFileError, UnknownSectionError, WeightFileError
from persistence.run_files import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"NETI"
VERSION = 1
DIGEST_SIZE = 32

Sections = Mapping[str, np.ndarray]


def _items(sections: Union[Sections, Iterable[Tuple[str, np.ndarray]]]):
    items = list(sections.items()) if isinstance(sections, Mapping) else list(sections)
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise WeightFileError("section names must be unique")
    return items


def encode_weights(sections: Union[Sections, Iterable[Tuple[str, np.ndarray]]]) -> bytes:
    items = _items(sections)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(items))
    for name, array in items:
        name_bytes = name.encode("utf-8")
        array = np.asarray(array)
        out += struct.pack("<H", len(name_bytes))
        out += name_bytes
        out += struct.pack("<B", array.ndim)
        out += struct.pack(f"<{array.ndim}I", *array.shape)
        out += np.ascontiguousarray(array, dtype="<f4").tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def encoded_size(sections: Union[Sections, Iterable[Tuple[str, np.ndarray]]]) -> int:
    """File size in bytes without building the payload."""
    size = len(MAGIC) + 8 + DIGEST_SIZE
    for name, array in _items(sections):
        shape = np.shape(array)
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))
    return size


def save_weights(path: Union[str, Path], sections: Union[Sections, Iterable[Tuple[str, np.ndarray]]]) -> int:
    """Atomically write sections; returns the number of bytes written."""
    payload = encode_weights(sections)
    atomic_write_bytes(path, payload)
    logger.debug("wrote %s (%d bytes)", path, len(payload))
    return len(payload)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.payload):
            raise TruncatedFileError(f"needed {count} bytes at offset {self.offset}, file body is {len(self.payload)}")
        chunk = self.payload[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(payload: bytes, strict: bool = False,
                   expected: Optional[Iterable[str]] = None) -> "OrderedDict[str, np.ndarray]":
    if len(payload) < len(MAGIC) + 8 + DIGEST_SIZE:
        if payload[:4] != MAGIC[:len(payload[:4])]:
            raise BadMagicError("not a weight file")
        raise TruncatedFileError(f"file has only {len(payload)} bytes")
    if payload[:4] != MAGIC:
        raise BadMagicError(f"bad magic {payload[:4]!r}")
    body, digest = payload[:-DIGEST_SIZE], payload[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch")

    reader = _Reader(body)
    reader.take(4)
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise WeightFileError(f"unsupported version {version}")
    allowed = set(expected) if expected is not None else None
    sections: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        numel = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(4 * numel), dtype="<f4").reshape(shape)
        if strict and allowed is not None and name not in allowed:
            raise UnknownSectionError(f"unexpected section {name!r}")
        sections[name] = data.astype(np.float32)
    if reader.offset != len(body):
        raise WeightFileError(f"{len(body) - reader.offset} trailing bytes after the last section")
    return sections


def load_weights(path: Union[str, Path], strict: bool = False,
                 expected: Optional[Iterable[str]] = None) -> "OrderedDict[str, np.ndarray]":
    """Read and verify a weight file. Under ``strict`` unknown section names are rejected."""
    with open(path, "rb") as handle:
        payload = handle.read()
    return decode_weights(payload, strict=strict, expected=expected)
