"""Blocks, headers, signed transactions and the validated block tree.

A block header carries their parent link, the Merkle root of the block's
transactions, a timestamp in simulated seconds, the height and an opaque
consensus seal. ``ChainState`` stores every accepted block, tracks the set
of tips and selects the canonical head by fork choice. All operations are
pure functions of explicit inputs except ``append_block``, which callers
must serialize externally (single scheduler thread in the simulator).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Protocol, Sequence

from ._kernels import sha256
from .encoding import enc_str, enc_u64, encode_fields
from .keys import KeyPair, derive_address, verify_signature
from .merkle import merkle_root

DIGEST_LEN = 32
ZERO_DIGEST = b"\x00" * DIGEST_LEN

# A sealed block may legitimately carry zero transactions (the Merkle root
# itself is undefined over an empty list), so empty blocks and the genesis
# block use this constant instead.
EMPTY_TX_ROOT = sha256(b"\x02")

GENESIS_SEAL = b"genesis"


class ChainError(Exception):
    """Base class for block validation failures."""


class UnknownParent(ChainError):
    pass


class BadTimestamp(ChainError):
    pass


class BadTxRoot(ChainError):
    pass


class BadSignature(ChainError):
    pass


class GasLimitExceeded(ChainError):
    pass


class NonceReplayed(ChainError):
    pass


class BadSeal(ChainError):
    pass


class FinalityBroken(ChainError):
    """More than one tip under a finalizing (fork-free) engine."""


@dataclass(frozen=True)
class Transaction:
    """A signed registry call.

    The signature covers the canonical encoding of every other field; the
    sender address is derived from the embedded public key so blocks are
    self-contained for re-validation.
    """

    sender_pubkey: bytes
    nonce: int
    function: str
    args: tuple[bytes, ...]
    gas_used: int
    signature: bytes

    @cached_property
    def sender(self) -> bytes:
        return derive_address(self.sender_pubkey)

    @cached_property
    def signing_bytes(self) -> bytes:
        return encode_fields([
            self.sender_pubkey,
            enc_u64(self.nonce),
            enc_str(self.function),
            encode_fields(self.args),
            enc_u64(self.gas_used),
        ])

    @cached_property
    def encoded(self) -> bytes:
        return self.signing_bytes + encode_fields([self.signature])

    @cached_property
    def tx_id(self) -> bytes:
        return sha256(self.encoded)

    def verify(self) -> bool:
        return verify_signature(self.sender_pubkey, self.signature,
                                self.signing_bytes)


def make_transaction(keypair: KeyPair, nonce: int, function: str,
                     args: Sequence[bytes], gas_used: int) -> Transaction:
    unsigned = Transaction(keypair.pubkey, nonce, function, tuple(args),
                           gas_used, b"")
    return Transaction(keypair.pubkey, nonce, function, tuple(args),
                       gas_used, keypair.sign(unsigned.signing_bytes))


@dataclass(frozen=True)
class BlockHeader:
    parent_hash: bytes
    tx_root: bytes
    timestamp: int  # simulated seconds
    height: int
    seal: bytes


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]


def sealing_bytes(header: BlockHeader) -> bytes:
    """Header encoding without the seal: the message consensus engines
    commit to (proof-of-work scans nonces over it, voters sign it)."""
    return encode_fields([
        header.parent_hash,
        header.tx_root,
        enc_u64(header.timestamp),
        enc_u64(header.height),
    ])


def hash_header(header: BlockHeader) -> bytes:
    return sha256(encode_fields([
        header.parent_hash,
        header.tx_root,
        enc_u64(header.timestamp),
        enc_u64(header.height),
        header.seal,
    ]))


def compute_tx_root(transactions: Sequence[Transaction]) -> bytes:
    if not transactions:
        return EMPTY_TX_ROOT
    return merkle_root([tx.encoded for tx in transactions])


def make_genesis(timestamp: int = 0) -> Block:
    header = BlockHeader(ZERO_DIGEST, EMPTY_TX_ROOT, timestamp, 0, GENESIS_SEAL)
    return Block(header, ())


class ConsensusEngine(Protocol):
    """Seal verifier contract. Engines are stateless deciders; anything a
    schedule needs (difficulty history) is derived from chain records."""

    name: str
    final: bool  # True when the engine never allows two tips (PBFT)

    def verify_seal(self, chain: "ChainState", block: Block,
                    parent: "BlockRecord") -> None:
        """Raise BadSeal when the block's seal does not verify."""

    def on_accept(self, chain: "ChainState", record: "BlockRecord") -> None:
        """Annotate the accepted record with engine-derived state."""


@dataclass
class BlockRecord:
    block: Block
    hash: bytes
    parent: Optional["BlockRecord"]
    nonces: dict[bytes, int]  # sender address -> highest nonce on this branch
    accepted_at_ms: int = 0
    meta: dict = None  # engine annotations (e.g. difficulty in force)

    def __post_init__(self):
        if self.meta is None:
            self.meta = {}

    @property
    def height(self) -> int:
        return self.block.header.height

    @property
    def header(self) -> BlockHeader:
        return self.block.header


def select_head(tips: Iterable[BlockRecord], final: bool = False) -> BlockRecord:
    """Fork choice: greatest height, ties broken by lowest header digest.

    A finalizing engine admits exactly one tip; seeing more is an invariant
    violation, not a choice to make.
    """
    candidates = sorted(tips, key=lambda r: (-r.height, r.hash))
    if not candidates:
        raise ValueError("select_head requires at least one tip")
    if final and len(candidates) > 1:
        raise FinalityBroken(
            f"{len(candidates)} tips under a finalizing engine")
    return candidates[0]


class ChainState:
    """All accepted blocks plus the canonical head for one node's view."""

    def __init__(self, genesis: Block, engine: ConsensusEngine,
                 block_gas_limit: int):
        if genesis.header.height != 0 or genesis.transactions:
            raise ValueError("genesis must be an empty block at height 0")
        self.engine = engine
        self.block_gas_limit = block_gas_limit
        self.genesis = BlockRecord(genesis, hash_header(genesis.header),
                                   None, {})
        self.records: dict[bytes, BlockRecord] = {self.genesis.hash: self.genesis}
        self.tips: dict[bytes, BlockRecord] = {self.genesis.hash: self.genesis}
        self.head: BlockRecord = self.genesis
        engine.on_accept(self, self.genesis)

    def __contains__(self, block_hash: bytes) -> bool:
        return block_hash in self.records

    def record(self, block_hash: bytes) -> BlockRecord:
        return self.records[block_hash]

    def append_block(self, block: Block,
                     engine: ConsensusEngine | None = None,
                     now_ms: int = 0) -> BlockRecord:
        """Validate and insert a block; returns its record.

        Rejection leaves the chain untouched. Checks, in order: parent
        link, timestamp monotonicity, transaction Merkle root, signatures,
        gas budget, per-sender nonce monotonicity, consensus seal.
        """
        engine = engine or self.engine
        header = block.header
        block_hash = hash_header(header)
        if block_hash in self.records:
            return self.records[block_hash]  # duplicate delivery is benign

        parent = self.records.get(header.parent_hash)
        if parent is None:
            raise UnknownParent(f"parent {header.parent_hash.hex()} unknown")
        if header.height != parent.height + 1:
            raise BadTimestamp(
                f"height {header.height} does not extend parent height "
                f"{parent.height}")
        if header.timestamp <= parent.header.timestamp:
            raise BadTimestamp(
                f"timestamp {header.timestamp} not after parent "
                f"{parent.header.timestamp}")
        if compute_tx_root(block.transactions) != header.tx_root:
            raise BadTxRoot(f"tx root mismatch at height {header.height}")
        for tx in block.transactions:
            if not tx.verify():
                raise BadSignature(
                    f"bad signature on tx {tx.tx_id.hex()[:16]}")
        gas_sum = sum(tx.gas_used for tx in block.transactions)
        if gas_sum > self.block_gas_limit:
            raise GasLimitExceeded(
                f"block gas {gas_sum} exceeds limit {self.block_gas_limit}")
        nonces = dict(parent.nonces)
        for tx in block.transactions:
            last = nonces.get(tx.sender, -1)
            if tx.nonce <= last:
                raise NonceReplayed(
                    f"nonce {tx.nonce} for {tx.sender.hex()} already used "
                    f"(last {last})")
            nonces[tx.sender] = tx.nonce
        record = BlockRecord(block, block_hash, parent, nonces,
                             accepted_at_ms=now_ms)
        engine.verify_seal(self, block, parent)

        self.records[block_hash] = record
        self.tips.pop(header.parent_hash, None)
        self.tips[block_hash] = record
        engine.on_accept(self, record)
        self.head = select_head(self.tips.values(), final=engine.final)
        return record

    def canonical(self) -> list[BlockRecord]:
        """Genesis-to-head block records along the canonical branch."""
        out = []
        rec: Optional[BlockRecord] = self.head
        while rec is not None:
            out.append(rec)
            rec = rec.parent
        out.reverse()
        return out

    def canonical_tx_ids(self) -> set[bytes]:
        ids = set()
        for rec in self.canonical():
            for tx in rec.block.transactions:
                ids.add(tx.tx_id)
        return ids

    def fork_heights(self) -> list[int]:
        """Heights at which this view knows more than one block."""
        by_height: dict[int, int] = {}
        for rec in self.records.values():
            by_height[rec.height] = by_height.get(rec.height, 0) + 1
        return sorted(h for h, n in by_height.items() if n > 1)

    def max_abandoned_depth(self) -> int:
        """Length of the longest non-canonical branch, measured from the
        point where it diverged from the canonical chain."""
        canonical = {rec.hash for rec in self.canonical()}
        deepest = 0
        for rec in self.records.values():
            if rec.hash in canonical:
                continue
            depth = 0
            cur: Optional[BlockRecord] = rec
            while cur is not None and cur.hash not in canonical:
                depth += 1
                cur = cur.parent
            deepest = max(deepest, depth)
        return deepest


# --- JSON-lines block format (replay and audit files) ---

def transaction_to_array(tx: Transaction) -> list:
    return [
        tx.sender_pubkey.hex(),
        tx.nonce,
        tx.function,
        [a.hex() for a in tx.args],
        tx.gas_used,
        tx.signature.hex(),
    ]


def transaction_from_array(arr: Sequence) -> Transaction:
    pubkey, nonce, function, args, gas_used, signature = arr
    return Transaction(
        bytes.fromhex(pubkey),
        int(nonce),
        str(function),
        tuple(bytes.fromhex(a) for a in args),
        int(gas_used),
        bytes.fromhex(signature),
    )


def block_to_json_line(block: Block) -> str:
    doc = {
        "hash": hash_header(block.header).hex(),
        "header": {
            "parent_hash": block.header.parent_hash.hex(),
            "tx_root": block.header.tx_root.hex(),
            "timestamp": block.header.timestamp,
            "height": block.header.height,
            "seal": block.header.seal.hex(),
        },
        "transactions": [transaction_to_array(tx) for tx in block.transactions],
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)


def block_from_json_line(line: str) -> tuple[Block, bytes]:
    """Parse a block line; returns the block and the hash the line claims."""
    doc = json.loads(line)
    h = doc["header"]
    header = BlockHeader(
        bytes.fromhex(h["parent_hash"]),
        bytes.fromhex(h["tx_root"]),
        int(h["timestamp"]),
        int(h["height"]),
        bytes.fromhex(h["seal"]),
    )
    txs = tuple(transaction_from_array(arr) for arr in doc["transactions"])
    return Block(header, txs), bytes.fromhex(doc["hash"])
