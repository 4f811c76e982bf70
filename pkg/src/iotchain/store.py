"""Content-addressed, replicated chunk store with failure injection.

Payloads are addressed by their SHA-256 digest and placed on ``r``
distinct nodes chosen by rendezvous (highest-random-weight) hashing, so
placement needs no coordinator and rebuilding a cluster over the same node
set reproduces it exactly. Chunks survive any ``r - 1`` node failures.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ._kernels import sha256


class StoreError(Exception):
    pass


class InsufficientReplicas(StoreError):
    pass


class NotFound(StoreError):
    pass


class Unavailable(StoreError):
    pass


class UnknownNode(StoreError):
    pass


@dataclass(frozen=True)
class ChunkHandle:
    """Content digest of a stored payload; a pure function of its bytes."""

    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("chunk handles are 32-byte digests")

    @classmethod
    def for_payload(cls, payload: bytes) -> "ChunkHandle":
        return cls(sha256(payload))

    @property
    def hex(self) -> str:
        return self.digest.hex()


def rendezvous_score(node_id: str, handle: ChunkHandle) -> int:
    return int.from_bytes(
        sha256(b"placement" + node_id.encode("utf-8") + handle.digest), "big")


class StoreCluster:
    """A set of storage nodes with up/down status and per-node replicas.

    put/get are atomic per call; re-putting identical bytes is the
    idempotence contract, returning the same handle without new writes.
    """

    def __init__(self, node_ids: list[str], replication_factor: int = 3):
        if replication_factor < 1:
            raise ValueError("replication factor must be at least 1")
        if len(set(node_ids)) != len(node_ids):
            raise ValueError("node ids must be distinct")
        if len(node_ids) < replication_factor:
            raise ValueError(
                f"{len(node_ids)} nodes cannot hold {replication_factor} replicas")
        self.replication_factor = replication_factor
        self.up: dict[str, bool] = {node: True for node in node_ids}
        # handle -> placement node tuple, fixed at put time
        self.placement: dict[ChunkHandle, tuple[str, ...]] = {}
        # node -> handle -> replica bytes (corruptible per node)
        self.data: dict[str, dict[ChunkHandle, bytes]] = {n: {} for n in node_ids}

    def up_nodes(self) -> list[str]:
        return [n for n, ok in self.up.items() if ok]

    def place(self, handle: ChunkHandle) -> tuple[str, ...]:
        """Top-r nodes by rendezvous weight among the nodes currently up."""
        ranked = sorted(self.up_nodes(),
                        key=lambda n: (rendezvous_score(n, handle), n),
                        reverse=True)
        return tuple(ranked[:self.replication_factor])

    def put(self, payload: bytes) -> ChunkHandle:
        handle = ChunkHandle.for_payload(payload)
        if handle in self.placement:
            return handle  # identical bytes, nothing new to write
        if len(self.up_nodes()) < self.replication_factor:
            raise InsufficientReplicas(
                f"{len(self.up_nodes())} nodes up, need "
                f"{self.replication_factor}")
        nodes = self.place(handle)
        for node in nodes:
            self.data[node][handle] = payload
        self.placement[handle] = nodes
        return handle

    def get(self, handle: ChunkHandle) -> bytes:
        """Bytes whose digest equals the handle, from any up replica.

        Replicas whose bytes no longer hash to the handle are skipped;
        content addressing means a reader never accepts corrupt data.
        """
        if handle not in self.placement:
            raise NotFound(f"chunk {handle.hex} was never stored")
        for node in self.placement[handle]:
            if not self.up[node]:
                continue
            payload = self.data[node].get(handle)
            if payload is not None and sha256(payload) == handle.digest:
                return payload
        raise Unavailable(f"no intact up replica for chunk {handle.hex}")

    def fail_node(self, node: str) -> None:
        if node not in self.up:
            raise UnknownNode(node)
        self.up[node] = False

    def recover_node(self, node: str) -> None:
        if node not in self.up:
            raise UnknownNode(node)
        self.up[node] = True

    def verify_integrity(self, handle: ChunkHandle) -> bool:
        """True iff every up replica's bytes hash to the handle. Replicas
        on failed nodes are unreadable and not judged."""
        if handle not in self.placement:
            raise NotFound(f"chunk {handle.hex} was never stored")
        for node in self.placement[handle]:
            if not self.up[node]:
                continue
            payload = self.data[node].get(handle)
            if payload is None or sha256(payload) != handle.digest:
                return False
        return True

    def corrupt_replica(self, node: str, handle: ChunkHandle,
                        payload: bytes) -> None:
        """Fault injection: overwrite one node's replica bytes."""
        if node not in self.up:
            raise UnknownNode(node)
        if handle not in self.data[node]:
            raise NotFound(f"node {node} holds no replica of {handle.hex}")
        self.data[node][handle] = payload

    def repair(self, handle: ChunkHandle) -> int:
        """Rewrite corrupt up replicas from an intact one; returns the
        number repaired."""
        good = self.get(handle)  # raises Unavailable if nothing intact
        repaired = 0
        for node in self.placement[handle]:
            if not self.up[node]:
                continue
            payload = self.data[node].get(handle)
            if payload is None or sha256(payload) != handle.digest:
                self.data[node][handle] = good
                repaired += 1
        return repaired

    # -- on-disk persistence (one file per chunk, named by hex handle) --

    def dump_chunks(self, directory: str | os.PathLike) -> int:
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        count = 0
        for handle in self.placement:
            (path / handle.hex).write_bytes(self.get(handle))
            count += 1
        return count


def fsck_chunk_dir(directory: str | os.PathLike) -> list[str]:
    """Re-hash every chunk file under a data directory; returns the hex
    names that fail (missing-name mismatch or unreadable)."""
    bad = []
    path = Path(directory)
    for entry in sorted(path.iterdir()):
        if not entry.is_file():
            continue
        try:
            expected = bytes.fromhex(entry.name)
        except ValueError:
            bad.append(entry.name)
            continue
        if sha256(entry.read_bytes()) != expected:
            bad.append(entry.name)
    return bad
