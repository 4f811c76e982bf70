"""Pure-Python hash kernels (hashlib-backed reference implementation).

The compiled extension in ``_ckernels.pyx`` mirrors these functions exactly;
both backends must produce identical bytes for identical inputs. Keep any
semantic change in lockstep across the two files.
"""

import hashlib
from typing import Optional, Sequence, Tuple

BACKEND = "python"

_NODE_TAG = b"\x01"
_NONCE_MASK = (1 << 64) - 1


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    """Fold 32-byte leaf digests into a binary-tree root.

    An odd node at any level is paired with itself. Interior nodes are
    domain-tagged so a leaf can never be confused with a node.
    """
    if not leaves:
        raise ValueError("merkle_root requires at least one leaf")
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(hashlib.sha256(_NODE_TAG + left + right).digest())
        level = nxt
    return level[0]


def pow_search(prefix: bytes, threshold: bytes, start_nonce: int,
               max_attempts: int) -> Tuple[Optional[int], int]:
    """Scan nonces from ``start_nonce`` until sha256(prefix || nonce_be8)
    falls below ``threshold`` (32 bytes, big-endian compare).

    Returns (nonce, attempts) on success or (None, max_attempts) when the
    budget is exhausted. Nonces wrap modulo 2**64.
    """
    if len(threshold) != 32:
        raise ValueError("threshold must be 32 bytes")
    if max_attempts <= 0:
        raise ValueError("max_attempts must be positive")
    nonce = start_nonce & _NONCE_MASK
    h = hashlib.sha256
    for attempt in range(1, max_attempts + 1):
        digest = h(prefix + nonce.to_bytes(8, "big")).digest()
        if digest < threshold:
            return nonce, attempt
        nonce = (nonce + 1) & _NONCE_MASK
    return None, max_attempts
