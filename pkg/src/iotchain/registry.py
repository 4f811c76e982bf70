"""Gas-metered device registry: the single on-chain contract.

The registry maps device addresses to timestamped storage handles and
emits one ``LogAction`` event per successful write. State changes happen
only during block application on the scheduler thread; the five getters
are pure reads and never touch state.

Two write semantics exist. The default deduplicated mode registers a
device in ``device_index`` only on first sight, so the index counts
distinct devices. Faithful mode appends the device id on every call
(matching a naive push-based contract), which duplicates index entries
and re-points ``DeviceData.index`` at the latest push; it exists for
side-by-side comparison via ``compare-modes``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from ._kernels import sha256
from .encoding import enc_u64, encode_fields

SET_DEVICE_DATA = "set_device_data"
DEFAULT_PER_TX_GAS = 21_000


class IndexOutOfRange(IndexError):
    pass


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class LogAction:
    """Event recorded for every successful set_device_data, in transaction
    order within each block."""

    device_id: bytes
    index: int
    timestamp: int
    filehash: bytes

    def to_json_line(self) -> str:
        return json.dumps({
            "device_id": self.device_id.hex(),
            "index": self.index,
            "timestamp": self.timestamp,
            "filehash": self.filehash.hex(),
        }, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "LogAction":
        doc = json.loads(line)
        return cls(bytes.fromhex(doc["device_id"]), int(doc["index"]),
                   int(doc["timestamp"]), bytes.fromhex(doc["filehash"]))


@dataclass
class DeviceData:
    index: int
    timestamps: list[int] = field(default_factory=list)
    filehashes: dict[int, bytes] = field(default_factory=dict)


@dataclass(frozen=True)
class GasSchedule:
    per_tx_gas: int = DEFAULT_PER_TX_GAS
    block_gas_limit: int = 4_712_388

    def __post_init__(self):
        if self.per_tx_gas <= 0 or self.block_gas_limit <= 0:
            raise ValueError("gas amounts must be positive")
        if self.per_tx_gas > self.block_gas_limit:
            raise ValueError("a single transaction cannot fit in a block")

    @property
    def max_tx_per_block(self) -> int:
        return self.block_gas_limit // self.per_tx_gas


class RegistryState:
    """Contract storage plus the six contract functions."""

    def __init__(self, faithful: bool = False):
        self.faithful = faithful
        self.device_index: list[bytes] = []
        self.device_logs: dict[bytes, DeviceData] = {}

    # -- the one mutating function --

    def set_device_data(self, device_id: bytes, filehash: bytes,
                        block_timestamp: int) -> tuple[int, int, LogAction]:
        """Record a storage handle under the current block timestamp.

        Returns (device index, timestamp) plus the emitted event. Every
        well-formed call succeeds; a repeated (device, timestamp) pair
        overwrites the handle without appending a duplicate timestamp.
        """
        if self.faithful:
            data = self.device_logs.setdefault(device_id, DeviceData(0))
            data.timestamps.append(block_timestamp)
            data.filehashes[block_timestamp] = filehash
            self.device_index.append(device_id)
            data.index = len(self.device_index) - 1
            index = data.index
        else:
            data = self.device_logs.get(device_id)
            if data is None:
                self.device_index.append(device_id)
                data = DeviceData(len(self.device_index) - 1)
                self.device_logs[device_id] = data
            if not data.timestamps or data.timestamps[-1] != block_timestamp:
                data.timestamps.append(block_timestamp)
            data.filehashes[block_timestamp] = filehash
            index = data.index
        action = LogAction(device_id, index, block_timestamp, filehash)
        return index, block_timestamp, action

    # -- the five constant functions (pure reads, no gas) --

    def is_device_present(self, device_id: bytes) -> bool:
        return device_id in self.device_logs

    def get_device_count(self) -> int:
        return len(self.device_index)

    def get_device_at_index(self, i: int) -> bytes:
        if not 0 <= i < len(self.device_index):
            raise IndexOutOfRange(
                f"index {i} out of range for {len(self.device_index)} devices")
        return self.device_index[i]

    def get_device_timestamps(self, device_id: bytes) -> list[int]:
        data = self.device_logs.get(device_id)
        return list(data.timestamps) if data else []

    def get_device_data(self, device_id: bytes, timestamp: int) -> bytes:
        data = self.device_logs.get(device_id)
        if data is None or timestamp not in data.filehashes:
            raise NotFound(
                f"no handle for device {device_id.hex()} at {timestamp}")
        return data.filehashes[timestamp]

    # -- audit helpers --

    def fingerprint(self) -> bytes:
        """Digest of the full state, for purity and replay-equivalence
        checks."""
        fields = [enc_u64(len(self.device_index))]
        fields.extend(self.device_index)
        for device_id in sorted(self.device_logs):
            data = self.device_logs[device_id]
            fields.append(device_id)
            fields.append(enc_u64(data.index))
            fields.append(encode_fields([enc_u64(t) for t in data.timestamps]))
            fields.append(encode_fields(
                [enc_u64(t) + data.filehashes[t]
                 for t in sorted(data.filehashes)]))
        return sha256(encode_fields(fields))

    @classmethod
    def replay_events(cls, events: Iterable[LogAction],
                      faithful: bool = False) -> "RegistryState":
        """Rebuild state from an event log. The log is a complete audit
        trail: replaying it must reproduce the original state exactly."""
        state = cls(faithful=faithful)
        for event in events:
            index, _, _ = state.set_device_data(
                event.device_id, event.filehash, event.timestamp)
            if index != event.index:
                raise ValueError(
                    f"event log inconsistent: event says index "
                    f"{event.index}, replay produced {index}")
        return state


# --- block packing ---

def pack_block(mempool: Sequence, schedule: GasSchedule) -> list:
    """Longest mempool prefix whose gas sum fits the block budget.

    With uniform per-transaction gas this is exactly
    floor(limit / per_tx_gas) transactions.
    """
    packed = []
    gas = 0
    for tx in mempool:
        if gas + tx.gas_used > schedule.block_gas_limit:
            break
        packed.append(tx)
        gas += tx.gas_used
    return packed


# --- event delivery ---

@dataclass
class Subscription:
    device_filter: Optional[bytes]
    events: deque = field(default_factory=deque)
    callback: Optional[Callable[[LogAction], None]] = None

    def matches(self, event: LogAction) -> bool:
        return self.device_filter is None or event.device_id == self.device_filter


class EventBus:
    """Synchronous event fanout at block commit, block-then-transaction
    order."""

    def __init__(self):
        self.subscriptions: list[Subscription] = []
        self.delivered = 0

    def subscribe(self, device_filter: Optional[bytes] = None,
                  callback: Optional[Callable[[LogAction], None]] = None
                  ) -> Subscription:
        sub = Subscription(device_filter, callback=callback)
        self.subscriptions.append(sub)
        return sub

    def publish(self, events: Sequence[LogAction]) -> None:
        for event in events:
            for sub in self.subscriptions:
                if sub.matches(event):
                    sub.events.append(event)
                    self.delivered += 1
                    if sub.callback is not None:
                        sub.callback(event)
