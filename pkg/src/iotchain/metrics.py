"""Throughput arithmetic and run metrics.

``throughput_model`` is the closed-form capacity model: transactions per
block from the gas budget, then rate from the block time. The simulator's
measured numbers land in ``MetricsReport``; the two must agree for a
saturated mempool, which the acceptance suite checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .keys import HASH_FUNCTION, SIGNATURE_SCHEME


@dataclass(frozen=True)
class ThroughputModel:
    gas_limit: int
    per_tx_gas: int
    block_time_s: float
    tx_per_block: int
    tps: float
    tx_per_minute: float
    note: Optional[str] = None


def throughput_model(gas_limit: int, per_tx_gas: int,
                     block_time_s: float) -> ThroughputModel:
    """Pure arithmetic, no simulation: floor(limit/per-tx) transactions per
    block, divided by the block time."""
    if gas_limit <= 0 or per_tx_gas <= 0 or block_time_s <= 0:
        raise ValueError("throughput model inputs must all be positive")
    tx_per_block = gas_limit // per_tx_gas
    tps = tx_per_block / block_time_s
    note = None
    exact = gas_limit / per_tx_gas
    if exact - tx_per_block >= 0.5:
        # nearest-integer rounding would overstate capacity by one tx; the
        # model uses the exact floor
        note = (f"gas_limit/per_tx_gas = {exact:.2f}: nearest-integer "
                f"rounding gives {tx_per_block + 1} tx/block, the exact "
                f"floor used here is {tx_per_block}")
    return ThroughputModel(gas_limit, per_tx_gas, block_time_s, tx_per_block,
                           tps, 60.0 * tps, note)


def render_throughput(model: ThroughputModel) -> str:
    lines = [
        "throughput model",
        f"  gas limit        : {model.gas_limit:,} gas/block",
        f"  per-tx gas       : {model.per_tx_gas:,} gas",
        f"  block time       : {model.block_time_s:g} s",
        f"  tx per block     : {model.tx_per_block}",
        f"  tx per second    : {model.tps:.10g}",
        f"  tx per minute    : {model.tx_per_minute:.10g}",
    ]
    if model.note:
        lines.append(f"  note             : {model.note}")
    return "\n".join(lines)


def dist_summary(values: list[float]) -> dict:
    if not values:
        return {"count": 0}
    ordered = sorted(values)

    def pct(p: float) -> float:
        return ordered[int(p * (len(ordered) - 1))]

    return {
        "count": len(values),
        "mean": round(sum(values) / len(values), 6),
        "min": ordered[0],
        "p50": pct(0.50),
        "p95": pct(0.95),
        "max": ordered[-1],
    }


@dataclass
class MetricsReport:
    scenario_name: str
    seed: int
    consensus: str
    faithful_mode: bool
    blocks: int
    total_txs: int
    duration_s: int
    tps: float
    tx_per_minute: float
    tx_per_block: dict
    block_time_s: dict
    fork_count: int
    max_fork_depth: int
    converged: bool
    latency_ms: dict
    counts: dict
    registry: dict
    gas: dict
    notes: list[str] = field(default_factory=list)
    hash_function: str = HASH_FUNCTION
    signature_scheme: str = SIGNATURE_SCHEME

    def to_json(self) -> str:
        doc = {
            "hash_function": self.hash_function,
            "signature_scheme": self.signature_scheme,
            "scenario": self.scenario_name,
            "seed": self.seed,
            "consensus": self.consensus,
            "faithful_mode": self.faithful_mode,
            "blocks": self.blocks,
            "total_txs": self.total_txs,
            "duration_s": self.duration_s,
            "tps": round(self.tps, 6),
            "tx_per_minute": round(self.tx_per_minute, 6),
            "tx_per_block": self.tx_per_block,
            "block_time_s": self.block_time_s,
            "fork_count": self.fork_count,
            "max_fork_depth": self.max_fork_depth,
            "converged": self.converged,
            "latency_ms": self.latency_ms,
            "counts": self.counts,
            "registry": self.registry,
            "gas": self.gas,
            "notes": self.notes,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        c = self.counts
        rows = [
            ("hash function", self.hash_function),
            ("signature scheme", self.signature_scheme),
            ("scenario", self.scenario_name),
            ("seed", self.seed),
            ("consensus", self.consensus),
            ("registry mode", "faithful" if self.faithful_mode else "dedup"),
            ("blocks", self.blocks),
            ("total txs", self.total_txs),
            ("simulated duration s", self.duration_s),
            ("tps", f"{self.tps:.4f}"),
            ("tx per minute", f"{self.tx_per_minute:.2f}"),
            ("tx/block mean", self.tx_per_block.get("mean", 0)),
            ("tx/block min..max", f"{self.tx_per_block.get('min', 0)}"
                                  f"..{self.tx_per_block.get('max', 0)}"),
            ("block time mean s", self.block_time_s.get("mean", 0)),
            ("fork count", self.fork_count),
            ("max fork depth", self.max_fork_depth),
            ("converged", self.converged),
            ("latency ms mean", self.latency_ms.get("mean", "-")),
            ("latency ms p95", self.latency_ms.get("p95", "-")),
            ("frames emitted", c.get("frames_emitted", 0)),
            ("frames lost", c.get("frames_lost", 0)),
            ("frames received", c.get("frames_received", 0)),
            ("duplicates dropped", c.get("duplicates_dropped", 0)),
            ("chunks stored", c.get("chunks_stored", 0)),
            ("txs enqueued", c.get("txs_enqueued", 0)),
            ("txs committed", c.get("txs_committed", 0)),
            ("events committed", c.get("events_committed", 0)),
            ("events delivered", c.get("events_delivered", 0)),
            ("retry buffer drops", c.get("retry_buffer_drops", 0)),
            ("registered devices", self.registry.get("device_count", 0)),
        ]
        width = max(len(label) for label, _ in rows)
        lines = ["run report", "=" * 10]
        lines += [f"{label.ljust(width)} : {value}" for label, value in rows]
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"
