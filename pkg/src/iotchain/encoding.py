"""Canonical byte encoding shared by hashing and signing.

Every hashed or signed structure is serialized as length-prefixed field
concatenation in declaration order: each field becomes a 4-byte big-endian
length followed by the field bytes. Integers are fixed 8-byte big-endian.
The encoding is unambiguous, so equal encodings imply equal structures.
"""

from typing import Iterator, Sequence

_LEN_BYTES = 4
_U64_MAX = (1 << 64) - 1


def enc_u64(value: int) -> bytes:
    if not 0 <= value <= _U64_MAX:
        raise ValueError(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def enc_str(value: str) -> bytes:
    return value.encode("utf-8")


def encode_fields(fields: Sequence[bytes]) -> bytes:
    out = bytearray()
    for field in fields:
        out += len(field).to_bytes(_LEN_BYTES, "big")
        out += field
    return bytes(out)


def decode_fields(blob: bytes) -> list[bytes]:
    return list(iter_fields(blob))


def iter_fields(blob: bytes) -> Iterator[bytes]:
    pos = 0
    n = len(blob)
    while pos < n:
        if pos + _LEN_BYTES > n:
            raise ValueError("truncated length prefix")
        length = int.from_bytes(blob[pos:pos + _LEN_BYTES], "big")
        pos += _LEN_BYTES
        if pos + length > n:
            raise ValueError("field extends past end of buffer")
        yield blob[pos:pos + length]
        pos += length
