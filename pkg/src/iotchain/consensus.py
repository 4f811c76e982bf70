"""Pluggable block-sealing engines: proof-of-work with difficulty
retargeting, stake-weighted proposer selection, and quorum-voting BFT with
finality.

Engines are stateless deciders over explicit inputs; every random draw
flows from caller-supplied seed bytes, so two runs with the same scenario
seed seal identical chains. Seals travel inside block headers as opaque
bytes; each engine owns its seal codec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from . import _kernels
from ._kernels import sha256
from .chain import (
    BadSeal,
    Block,
    BlockRecord,
    BlockHeader,
    ChainState,
    sealing_bytes,
)
from .encoding import decode_fields, enc_u64, encode_fields
from .keys import KeyPair, derive_address, verify_signature

MAX_TARGET = (1 << 256) - 1


class ZeroTotalStake(ValueError):
    pass


class DuplicateVoter(ValueError):
    pass


class UnknownValidator(ValueError):
    pass


# --- proof of work ---

@dataclass(frozen=True)
class Difficulty:
    """Numeric target: a seal digest is valid iff strictly below threshold."""

    threshold: int

    def __post_init__(self):
        if not 0 < self.threshold <= MAX_TARGET:
            raise ValueError("difficulty threshold must be in (0, 2^256 - 1]")

    def to_bytes(self) -> bytes:
        return self.threshold.to_bytes(32, "big")

    @classmethod
    def from_expected_attempts(cls, attempts: float) -> "Difficulty":
        """Target whose expected solve cost is ``attempts`` hashes."""
        if attempts < 1:
            raise ValueError("expected attempts must be >= 1")
        return cls(max(1, int((1 << 256) / attempts)))


@dataclass(frozen=True)
class PowSeal:
    nonce: int
    threshold: int

    def to_bytes(self) -> bytes:
        return encode_fields([b"pow", enc_u64(self.nonce),
                              self.threshold.to_bytes(32, "big")])

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PowSeal":
        tag, nonce, threshold = decode_fields(blob)
        if tag != b"pow":
            raise ValueError("not a pow seal")
        return cls(int.from_bytes(nonce, "big"),
                   int.from_bytes(threshold, "big"))


def pow_message(header: BlockHeader) -> bytes:
    return sealing_bytes(header)


def pow_seal(header: BlockHeader, difficulty: Difficulty,
             attempt_budget: int,
             start_nonce: int = 0) -> tuple[Optional[PowSeal], int]:
    """Scan nonces until the work digest falls below the target.

    Returns (seal, attempts) or (None, attempts) when the budget runs out;
    exhaustion is a reschedule signal for the caller, not a failure. The
    scan order is fully determined by ``start_nonce``.
    """
    nonce, attempts = _kernels.pow_search(
        pow_message(header), difficulty.to_bytes(), start_nonce,
        attempt_budget)
    if nonce is None:
        return None, attempts
    return PowSeal(nonce, difficulty.threshold), attempts


def pow_verify(header: BlockHeader, seal: PowSeal,
               difficulty: Difficulty) -> bool:
    """One hash, regardless of how many attempts sealing took."""
    digest = sha256(pow_message(header) + seal.nonce.to_bytes(8, "big"))
    return int.from_bytes(digest, "big") < difficulty.threshold


RETARGET_CLAMP = 4.0


def retarget(recent_block_times: Sequence[float], current: Difficulty,
             target_interval: float) -> Difficulty:
    """Scale the target by observed/target mean block time, clamped to a
    factor of 4 per adjustment to stop oscillation.

    Blocks arriving too slowly raise the threshold (easier), too fast
    lowers it (harder).
    """
    if not recent_block_times:
        raise ValueError("need at least one observed block time")
    if target_interval <= 0:
        raise ValueError("target interval must be positive")
    mean_observed = sum(recent_block_times) / len(recent_block_times)
    factor = mean_observed / target_interval
    factor = min(RETARGET_CLAMP, max(1.0 / RETARGET_CLAMP, factor))
    new_threshold = min(MAX_TARGET, max(1, int(current.threshold * factor)))
    return Difficulty(new_threshold)


# --- proof of stake ---

class StakeTable:
    """Ordered association from address to stake units."""

    def __init__(self, stakes: Mapping[bytes, int] | Iterable[tuple[bytes, int]]):
        items = stakes.items() if isinstance(stakes, Mapping) else stakes
        self._stakes: dict[bytes, int] = {}
        for address, amount in items:
            if amount < 0:
                raise ValueError("stake amounts are non-negative")
            self._stakes[address] = self._stakes.get(address, 0) + amount

    @property
    def total(self) -> int:
        return sum(self._stakes.values())

    def items(self) -> list[tuple[bytes, int]]:
        return list(self._stakes.items())

    def __getitem__(self, address: bytes) -> int:
        return self._stakes.get(address, 0)


def pos_select(stakes: StakeTable, seed: bytes) -> bytes:
    """Pick an address with probability proportional to its stake.

    Deterministic in ``seed``; the draw maps a 256-bit hash onto the
    cumulative stake line (the modulo bias is ~total/2^256, far below
    anything observable at simulation scale).
    """
    total = stakes.total
    if total <= 0:
        raise ZeroTotalStake("stake table sums to zero")
    draw = int.from_bytes(sha256(seed), "big") % total
    acc = 0
    for address, amount in stakes.items():
        acc += amount
        if draw < acc:
            return address
    raise AssertionError("unreachable: draw < total by construction")


def pos_draw_seed(parent_hash: bytes, height: int) -> bytes:
    return sha256(b"pos-draw" + parent_hash + enc_u64(height))


@dataclass(frozen=True)
class PosSeal:
    validator: bytes

    def to_bytes(self) -> bytes:
        return encode_fields([b"pos", self.validator])

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PosSeal":
        tag, validator = decode_fields(blob)
        if tag != b"pos":
            raise ValueError("not a pos seal")
        return cls(validator)


# --- practical BFT (single round per height, rotating proposer) ---

@dataclass(frozen=True)
class PbftConfig:
    validators: tuple[bytes, ...]
    f: int

    def __post_init__(self):
        if self.f < 0:
            raise ValueError("f must be non-negative")
        if len(self.validators) < 3 * self.f + 1:
            raise ValueError(
                f"{len(self.validators)} validators cannot tolerate "
                f"f={self.f} faults (need at least {3 * self.f + 1})")
        if len(set(self.validators)) != len(self.validators):
            raise ValueError("validator addresses must be distinct")


def quorum_size(config: PbftConfig) -> int:
    return 2 * config.f + 1


@dataclass(frozen=True)
class Vote:
    validator: bytes
    pubkey: bytes
    proposal: bytes
    signature: bytes

    def verify(self) -> bool:
        # the embedded key must actually be the validator's key, or a
        # certificate could swap in an attacker keypair under a known name
        if derive_address(self.pubkey) != self.validator:
            return False
        return verify_signature(self.pubkey, self.signature,
                                b"pbft-vote" + self.proposal)


def sign_vote(keypair: KeyPair, proposal: bytes) -> Vote:
    return Vote(keypair.address, keypair.pubkey, proposal,
                keypair.sign(b"pbft-vote" + proposal))


@dataclass(frozen=True)
class CommitCertificate:
    proposal: bytes
    votes: tuple[Vote, ...]

    def to_bytes(self) -> bytes:
        vote_blobs = [
            encode_fields([v.validator, v.pubkey, v.signature])
            for v in self.votes
        ]
        return encode_fields([b"pbft", self.proposal] + vote_blobs)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CommitCertificate":
        fields = decode_fields(blob)
        if not fields or fields[0] != b"pbft":
            raise ValueError("not a pbft seal")
        proposal = fields[1]
        votes = []
        for vote_blob in fields[2:]:
            validator, pubkey, signature = decode_fields(vote_blob)
            votes.append(Vote(validator, pubkey, proposal, signature))
        return cls(proposal, tuple(votes))


def pbft_decide(proposal: bytes, votes: Sequence[Vote],
                config: PbftConfig) -> Optional[CommitCertificate]:
    """Certificate when at least 2f+1 distinct configured validators signed
    the identical proposal digest; None below quorum."""
    seen: set[bytes] = set()
    matching: list[Vote] = []
    for vote in votes:
        if vote.validator not in config.validators:
            raise UnknownValidator(
                f"vote from {vote.validator.hex()} outside the validator set")
        if vote.validator in seen:
            raise DuplicateVoter(
                f"validator {vote.validator.hex()} voted twice in one round")
        seen.add(vote.validator)
        if vote.proposal == proposal and vote.verify():
            matching.append(vote)
    if len(matching) >= quorum_size(config):
        return CommitCertificate(proposal, tuple(matching))
    return None


def pbft_proposal_digest(header: BlockHeader) -> bytes:
    return sha256(b"pbft-proposal" + sealing_bytes(header))


# --- engines (seal verifiers plugged into ChainState) ---

@dataclass
class PowEngine:
    target_interval_s: float
    initial_difficulty: Difficulty
    retarget_window: int = 16

    name: str = field(default="pow", init=False)
    final: bool = field(default=False, init=False)

    def difficulty_for_child(self, parent: BlockRecord) -> Difficulty:
        """Difficulty in force for a block extending ``parent``. Retargets
        each time the child height crosses a window boundary, from the last
        window of observed intervals on that branch."""
        current: Difficulty = parent.meta["difficulty"]
        child_height = parent.height + 1
        window = self.retarget_window
        if window <= 0 or child_height % window != 0 or child_height == 0:
            return current
        times = []
        rec = parent
        for _ in range(window):
            if rec.parent is None:
                break
            times.append(rec.header.timestamp - rec.parent.header.timestamp)
            rec = rec.parent
        if not times:
            return current
        return retarget(times, current, self.target_interval_s)

    def verify_seal(self, chain: ChainState, block: Block,
                    parent: BlockRecord) -> None:
        try:
            seal = PowSeal.from_bytes(block.header.seal)
        except ValueError as exc:
            raise BadSeal(f"undecodable pow seal: {exc}") from exc
        expected = self.difficulty_for_child(parent)
        if seal.threshold != expected.threshold:
            raise BadSeal(
                f"seal declares threshold {seal.threshold:#066x}, schedule "
                f"requires {expected.threshold:#066x}")
        if not pow_verify(block.header, seal, expected):
            raise BadSeal("work digest not below target")

    def on_accept(self, chain: ChainState, record: BlockRecord) -> None:
        if record.parent is None:
            record.meta["difficulty"] = self.initial_difficulty
        else:
            record.meta["difficulty"] = self.difficulty_for_child(record.parent)


@dataclass
class PosEngine:
    stakes: StakeTable

    name: str = field(default="pos", init=False)
    final: bool = field(default=False, init=False)

    def select_proposer(self, parent_hash: bytes, height: int) -> bytes:
        return pos_select(self.stakes, pos_draw_seed(parent_hash, height))

    def verify_seal(self, chain: ChainState, block: Block,
                    parent: BlockRecord) -> None:
        try:
            seal = PosSeal.from_bytes(block.header.seal)
        except ValueError as exc:
            raise BadSeal(f"undecodable pos seal: {exc}") from exc
        expected = self.select_proposer(block.header.parent_hash,
                                        block.header.height)
        if seal.validator != expected:
            raise BadSeal(
                f"sealed by {seal.validator.hex()}, stake draw selected "
                f"{expected.hex()}")

    def on_accept(self, chain: ChainState, record: BlockRecord) -> None:
        pass


@dataclass
class PbftEngine:
    config: PbftConfig

    name: str = field(default="pbft", init=False)
    final: bool = field(default=True, init=False)

    def proposer_at(self, height: int, round_: int = 0) -> bytes:
        order = self.config.validators
        return order[(height + round_) % len(order)]

    def verify_seal(self, chain: ChainState, block: Block,
                    parent: BlockRecord) -> None:
        try:
            cert = CommitCertificate.from_bytes(block.header.seal)
        except ValueError as exc:
            raise BadSeal(f"undecodable pbft seal: {exc}") from exc
        digest = pbft_proposal_digest(block.header)
        if cert.proposal != digest:
            raise BadSeal("certificate covers a different proposal digest")
        try:
            decided = pbft_decide(digest, cert.votes, self.config)
        except (DuplicateVoter, UnknownValidator) as exc:
            raise BadSeal(str(exc)) from exc
        if decided is None:
            raise BadSeal(
                f"certificate carries fewer than {quorum_size(self.config)} "
                "matching votes")

    def on_accept(self, chain: ChainState, record: BlockRecord) -> None:
        pass
