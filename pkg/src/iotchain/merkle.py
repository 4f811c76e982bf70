"""Binary Merkle trees with inclusion proofs.

Leaves are domain-tagged with 0x00 and interior nodes with 0x01 before
hashing, so a payload can never masquerade as an interior node. An odd node
at any level is paired with itself (duplicate-last rule). Root folding is
delegated to the selected hash kernel; proof generation builds the full
level structure in Python since it is never on the hot path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import _kernels
from ._kernels import sha256

LEAF_TAG = b"\x00"
NODE_TAG = b"\x01"

LEFT = "L"
RIGHT = "R"


class EmptyBlock(ValueError):
    """Raised when a Merkle operation is asked for an empty item list."""


def leaf_digest(item: bytes) -> bytes:
    return sha256(LEAF_TAG + item)


def node_digest(left: bytes, right: bytes) -> bytes:
    return sha256(NODE_TAG + left + right)


@dataclass(frozen=True)
class MerkleProof:
    """Inclusion proof: the leaf position and its sibling path.

    Each path entry is (sibling digest, side), where side says which side
    the sibling sits on when the pair is hashed. For an n-leaf tree the
    path has ceil(log2(n)) entries; a single-leaf tree proves with an
    empty path.
    """

    leaf_index: int
    path: tuple[tuple[bytes, str], ...]


def merkle_levels(items: Sequence[bytes]) -> list[list[bytes]]:
    """All tree levels, leaves first. Used for proof generation."""
    if not items:
        raise EmptyBlock("cannot build a Merkle tree over zero items")
    levels = [[leaf_digest(item) for item in items]]
    while len(levels[-1]) > 1:
        prev = levels[-1]
        nxt = []
        for i in range(0, len(prev), 2):
            left = prev[i]
            right = prev[i + 1] if i + 1 < len(prev) else left
            nxt.append(node_digest(left, right))
        levels.append(nxt)
    return levels


def merkle_root(items: Sequence[bytes]) -> bytes:
    if not items:
        raise EmptyBlock("cannot compute the Merkle root of zero items")
    return _kernels.merkle_root([leaf_digest(item) for item in items])


def merkle_prove(items: Sequence[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(items):
        raise IndexError(f"leaf index {index} out of range for {len(items)} items")
    path = []
    pos = index
    for level in merkle_levels(items)[:-1]:
        sibling = pos ^ 1
        if sibling < len(level):
            side = LEFT if sibling < pos else RIGHT
            path.append((level[sibling], side))
        else:
            # odd node at the level edge pairs with itself
            path.append((level[pos], RIGHT))
        pos //= 2
    proof = MerkleProof(index, tuple(path))
    expected = math.ceil(math.log2(len(items))) if len(items) > 1 else 0
    assert len(proof.path) == expected
    return proof


def verify_proof(root: bytes, item: bytes, proof: MerkleProof) -> bool:
    """True iff folding the item's leaf digest through the path hits root.

    Malformed proofs return False rather than raising.
    """
    try:
        node = leaf_digest(item)
        for sibling, side in proof.path:
            if side == LEFT:
                node = node_digest(sibling, node)
            elif side == RIGHT:
                node = node_digest(node, sibling)
            else:
                return False
        return node == root
    except (TypeError, AttributeError):
        return False
