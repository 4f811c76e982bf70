"""Simulated LPWAN edge: end devices, gateways and the smart proxy.

A gateway's always-listening daemon accepts uplink frames, deduplicates
them, and hands payloads to its smart proxy. The proxy stores each payload
in the chunk store, then signs and enqueues the registry transaction that
anchors the returned handle, mirroring the store-then-register data path.

Device roles follow the capability matrix: battery-powered devices are
plain sensors or server-trusting clients; always-on devices are thin
clients or server-trusting clients. Constructors reject anything else.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from ._kernels import sha256
from .chain import (
    BlockHeader,
    ChainState,
    Transaction,
    hash_header,
    make_transaction,
)
from .encoding import enc_u64
from .keys import KeyPair
from .merkle import MerkleProof, merkle_prove, verify_proof
from .registry import SET_DEVICE_DATA
from .store import InsufficientReplicas, StoreCluster

MAX_PAYLOAD_LEN = 255
DEFAULT_RETRY_BUFFER = 1024


class RoleConstraintError(ValueError):
    pass


class DuplicateFrame(Exception):
    pass


class ClientRefused(Exception):
    pass


@dataclass(frozen=True)
class LinkTech:
    """One row of the LPWA connectivity matrix. Coupling loss is carried
    as descriptive metadata; only rate and range drive behavior."""

    name: str
    max_uplink_rate_bps: int
    max_range_m: int
    max_coupling_loss_db: int


TECHS: dict[str, LinkTech] = {
    "lora": LinkTech("LoRa", 50_000, 11_000, 157),
    "sigfox": LinkTech("Sigfox", 100, 13_000, 160),
    "nbiot": LinkTech("NB-IoT", 250_000, 15_000, 164),
    "emtc": LinkTech("eMTC", 1_000_000, 11_000, 156),
    "ecgsm": LinkTech("EC-GSM", 140_000, 15_000, 164),
}


def airtime(payload_len: int, tech: LinkTech) -> float:
    """Uplink airtime in seconds: payload bits over the technology's peak
    uplink rate."""
    if payload_len < 0:
        raise ValueError("payload length cannot be negative")
    return (8 * payload_len) / tech.max_uplink_rate_bps


def airtime_ms(payload_len: int, tech: LinkTech) -> int:
    """Airtime rounded up to the millisecond event grid."""
    return math.ceil(airtime(payload_len, tech) * 1000)


class Power(Enum):
    BATTERY = "battery"
    ALWAYS_ON = "always-on"


class ClientMode(Enum):
    PLAIN_SENSOR = "plain-sensor"
    SERVER_TRUSTING = "server-trusting"
    THIN_CLIENT = "thin-client"


_ALLOWED_MODES = {
    Power.BATTERY: {ClientMode.PLAIN_SENSOR, ClientMode.SERVER_TRUSTING},
    Power.ALWAYS_ON: {ClientMode.THIN_CLIENT, ClientMode.SERVER_TRUSTING},
}


@dataclass(frozen=True)
class UplinkFrame:
    device_id: bytes
    seq: int
    payload: bytes
    emitted_at_ms: int
    airtime_s: float


class EndDevice:
    """A sensor emitting one frame per period, payloads derived from the
    device identity, sequence number and scenario seed."""

    def __init__(self, keypair: KeyPair, power: Power, client_mode: ClientMode,
                 tech: LinkTech, emit_period_s: float, payload_len: int,
                 payload_seed: bytes, refuse_signing: bool = False):
        if client_mode not in _ALLOWED_MODES[power]:
            raise RoleConstraintError(
                f"a {power.value} device cannot run as {client_mode.value}")
        if not 0 <= payload_len <= MAX_PAYLOAD_LEN:
            raise ValueError(f"payload length must be 0..{MAX_PAYLOAD_LEN}")
        self.keypair = keypair
        self.power = power
        self.client_mode = client_mode
        self.tech = tech
        self.emit_period_ms = max(1, math.ceil(emit_period_s * 1000))
        self.payload_len = payload_len
        self.payload_seed = payload_seed
        self.refuse_signing = refuse_signing
        self.next_emit_ms = 0
        self.seq = 0

    @property
    def address(self) -> bytes:
        return self.keypair.address

    def payload_for(self, seq: int) -> bytes:
        material = (b"payload" + self.payload_seed + self.keypair.address
                    + enc_u64(seq))
        out = b""
        counter = 0
        while len(out) < self.payload_len:
            out += sha256(material + enc_u64(counter))
            counter += 1
        return out[:self.payload_len]

    def tick(self, now_ms: int) -> Optional[UplinkFrame]:
        """Emit a frame when the period has elapsed, else nothing."""
        if now_ms < self.next_emit_ms:
            return None
        frame = UplinkFrame(self.keypair.address, self.seq,
                            self.payload_for(self.seq), now_ms,
                            airtime(self.payload_len, self.tech))
        self.seq += 1
        self.next_emit_ms += self.emit_period_ms
        return frame

    def sign_transaction(self, unsigned: Transaction) -> Transaction:
        """Server-trusting flow: the device approves by signing; the
        holder of the chain never sees the private key."""
        if self.refuse_signing:
            raise ClientRefused(f"device {self.address.hex()} declined to sign")
        return make_transaction(self.keypair, unsigned.nonce,
                                unsigned.function, unsigned.args,
                                unsigned.gas_used)


class NonceCounter:
    """Per-sender transaction nonce allocation."""

    def __init__(self):
        self._next: dict[bytes, int] = {}

    def allocate(self, sender: bytes) -> int:
        nonce = self._next.get(sender, 0)
        self._next[sender] = nonce + 1
        return nonce


def server_trusting_submit(server_nonces: NonceCounter, device: EndDevice,
                           function: str, args: tuple[bytes, ...],
                           gas_used: int,
                           submit: Callable[[Transaction], None]) -> Transaction:
    """BCCAPI-style flow: the server prepares an unsigned transaction from
    the device's public key, the device signs, the server submits. The
    server cannot forge a signature, so a declined device keeps the
    mempool untouched."""
    nonce = server_nonces.allocate(device.address)
    unsigned = Transaction(device.keypair.pubkey, nonce, function, args,
                           gas_used, b"")
    signed = device.sign_transaction(unsigned)  # raises ClientRefused
    submit(signed)
    return signed


class SmartProxy:
    """Gateway-resident mediator between the radio daemon and the backend.

    Payloads are stored before the registry transaction is enqueued; if
    the store cannot take the payload the proxy buffers it (bounded,
    oldest dropped with a counted metric) and retries on its next tick.
    """

    def __init__(self, gateway_keypair: KeyPair, store: StoreCluster,
                 nonces: NonceCounter, submit: Callable[[Transaction], None],
                 per_tx_gas: int, retry_buffer: int = DEFAULT_RETRY_BUFFER):
        self.gateway_keypair = gateway_keypair
        self.store = store
        self.nonces = nonces
        self.submit = submit
        self.per_tx_gas = per_tx_gas
        self.buffer: deque[tuple[EndDevice, bytes]] = deque(maxlen=retry_buffer)
        self.buffer_drops = 0
        self.ingested = 0
        self.stored = 0

    def ingest(self, device: EndDevice, payload: bytes) -> Optional[bytes]:
        """Store the payload, then enqueue the registry call. Returns the
        transaction id, or None when the payload had to be buffered."""
        self.ingested += 1
        try:
            handle = self.store.put(payload)
        except InsufficientReplicas:
            if len(self.buffer) == self.buffer.maxlen:
                self.buffer_drops += 1
            self.buffer.append((device, payload))
            return None
        self.stored += 1
        args = (device.address, handle.digest)
        tx = self._build_transaction(device, args)
        self.submit(tx)
        return tx.tx_id

    def retry_tick(self) -> int:
        """Re-attempt buffered payloads; returns how many were flushed."""
        flushed = 0
        for _ in range(len(self.buffer)):
            device, payload = self.buffer.popleft()
            self.ingested -= 1  # re-ingest below, avoid double count
            if self.ingest(device, payload) is None:
                break  # store still down; ingest re-buffered this payload
            flushed += 1
        return flushed

    def _build_transaction(self, device: EndDevice,
                           args: tuple[bytes, ...]) -> Transaction:
        if device.client_mode is ClientMode.PLAIN_SENSOR:
            # no client logic on the device: the gateway account signs
            nonce = self.nonces.allocate(self.gateway_keypair.address)
            return make_transaction(self.gateway_keypair, nonce,
                                    SET_DEVICE_DATA, args, self.per_tx_gas)
        if device.client_mode is ClientMode.SERVER_TRUSTING:
            collected: list[Transaction] = []
            server_trusting_submit(self.nonces, device, SET_DEVICE_DATA,
                                   args, self.per_tx_gas, collected.append)
            return collected[0]
        # thin client: the device signs and the gateway only relays
        nonce = self.nonces.allocate(device.address)
        return make_transaction(device.keypair, nonce, SET_DEVICE_DATA,
                                args, self.per_tx_gas)


class GatewayRole(Enum):
    FULL_NODE = "full-node"
    THIN_CLIENT = "thin-client"


class Gateway:
    """Radio front end: single shared channel, FIFO when airtimes overlap,
    duplicate (device, seq) frames dropped."""

    def __init__(self, keypair: KeyPair, role: GatewayRole, proxy: SmartProxy):
        self.keypair = keypair
        self.role = role
        self.proxy = proxy
        self.channel_free_ms = 0
        self.seen: set[tuple[bytes, int]] = set()
        self.received = 0
        self.duplicates_dropped = 0

    @property
    def address(self) -> bytes:
        return self.keypair.address

    def schedule_arrival(self, frame: UplinkFrame) -> int:
        """Serialize the frame onto the channel; returns its arrival time.
        Transmission begins once the channel is free, so overlapping
        frames queue rather than collide."""
        start = max(frame.emitted_at_ms, self.channel_free_ms)
        arrival = start + max(0, math.ceil(frame.airtime_s * 1000))
        self.channel_free_ms = arrival
        return arrival

    def receive(self, frame: UplinkFrame, device: EndDevice) -> Optional[bytes]:
        """Deliver a frame to the proxy exactly once per (device, seq)."""
        key = (frame.device_id, frame.seq)
        if key in self.seen:
            self.duplicates_dropped += 1
            return None
        self.seen.add(key)
        self.received += 1
        return self.proxy.ingest(device, frame.payload)


class FullNodeView:
    """Full-node facade over a chain view: serves inclusion proofs to
    light clients."""

    def __init__(self, chain: ChainState):
        self.chain = chain

    def prove_inclusion(self, tx_id: bytes
                        ) -> Optional[tuple[BlockHeader, Transaction, MerkleProof]]:
        for rec in self.chain.canonical():
            for idx, tx in enumerate(rec.block.transactions):
                if tx.tx_id == tx_id:
                    items = [t.encoded for t in rec.block.transactions]
                    return rec.header, tx, merkle_prove(items, idx)
        return None

    def canonical_headers(self) -> list[BlockHeader]:
        return [rec.header for rec in self.chain.canonical()]


class ThinClient:
    """Header-only chain follower. Holds block headers and nothing else;
    transaction inclusion is checked against a held header via a Merkle
    proof supplied by some full node."""

    def __init__(self):
        self.headers: dict[int, BlockHeader] = {}

    def accept_header(self, header: BlockHeader) -> None:
        if header.height > 0:
            parent = self.headers.get(header.height - 1)
            if parent is None or hash_header(parent) != header.parent_hash:
                raise ValueError(
                    f"header at height {header.height} does not extend the "
                    "held chain")
        self.headers[header.height] = header

    def sync_from(self, view: FullNodeView) -> None:
        self.headers = {}
        for header in view.canonical_headers():
            self.headers[header.height] = header

    def confirm(self, tx_id: bytes, view: FullNodeView) -> bool:
        """True iff a full node supplies a proof for the transaction that
        verifies against a held header. Any doctored proof is unconfirmed."""
        package = view.prove_inclusion(tx_id)
        if package is None:
            return False
        header, tx, proof = package
        held = self.headers.get(header.height)
        if held is None or hash_header(held) != hash_header(header):
            return False
        if tx.tx_id != tx_id:
            return False
        return verify_proof(held.tx_root, tx.encoded, proof)

    def state_audit(self) -> dict:
        """What the client is holding, for the storage-footprint check."""
        return {
            "headers": len(self.headers),
            "object_types": sorted({type(v).__name__
                                    for v in self.headers.values()}),
        }
