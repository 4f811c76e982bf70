"""Run artifacts on disk, and the audit that re-validates them.

A run directory holds:

    manifest.json   resolved scenario, seed, engine parameters, genesis hash
    chain.jsonl     one block per line, genesis first (canonical chain)
    events.jsonl    one registry event per line, commit order
    trace.jsonl     one pipeline stage transition per line
    chunks/         one content-addressed file per stored chunk
    report.json     machine-readable metrics
    report.txt      aligned human summary
    blocks.csv      per-block rows (only when requested)

``verify_run`` rebuilds a fresh chain from the manifest and replays every
artifact against it: block-by-block re-validation, event-log equivalence
against the chain, and content hashes for every referenced chunk. The
first violation wins; its location (block height or line number) is part
of the result.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ._kernels import sha256
from .chain import (
    Block,
    ChainError,
    ChainState,
    block_from_json_line,
    block_to_json_line,
    hash_header,
    make_genesis,
)
from .consensus import Difficulty, PbftConfig, PbftEngine, PosEngine, PowEngine, StakeTable
from .registry import LogAction, RegistryState
from .sim import SimResult


def write_run_artifacts(result: SimResult, out_dir: str | Path,
                        with_csv: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "manifest.json").write_text(
        json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    with open(out / "chain.jsonl", "w") as fh:
        for block in result.canonical_blocks:
            fh.write(block_to_json_line(block) + "\n")
    with open(out / "events.jsonl", "w") as fh:
        for event in result.events:
            fh.write(event.to_json_line() + "\n")
    with open(out / "trace.jsonl", "w") as fh:
        for entry in result.trace:
            fh.write(json.dumps(entry, separators=(",", ":"),
                                sort_keys=True) + "\n")
    result.store.dump_chunks(out / "chunks")
    (out / "report.json").write_text(result.report.to_json())
    (out / "report.txt").write_text(result.report.to_text())
    if with_csv:
        with open(out / "blocks.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "height", "timestamp_s", "tx_count", "gas_used",
                "interval_s", "hash"])
            writer.writeheader()
            writer.writerows(result.per_block_rows)
    return out


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.detail}"


def _engine_from_manifest(manifest: dict):
    kind = manifest["scenario"]["consensus"]["kind"]
    if kind == "pow":
        pw = manifest["pow"]
        return PowEngine(
            target_interval_s=pw["target_interval_s"],
            initial_difficulty=Difficulty(int(pw["initial_threshold"], 16)),
            retarget_window=pw["retarget_window"])
    if kind == "pos":
        stakes = {bytes.fromhex(addr): amount
                  for addr, amount in manifest["pos"]["stakes"].items()}
        return PosEngine(StakeTable(stakes))
    validators = tuple(bytes.fromhex(v)
                       for v in manifest["pbft"]["validators"])
    return PbftEngine(PbftConfig(validators, f=manifest["pbft"]["f"]))


def verify_run(run_dir: str | Path) -> Optional[Violation]:
    """Re-validate a run directory; None means every check passed."""
    run = Path(run_dir)
    try:
        manifest = json.loads((run / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return Violation("manifest", str(run / "manifest.json"), str(exc))

    engine = _engine_from_manifest(manifest)
    genesis = make_genesis(timestamp=0)
    if hash_header(genesis.header).hex() != manifest["genesis_hash"]:
        return Violation("genesis", "manifest.json",
                         "genesis hash does not match this build")
    chain = ChainState(genesis, engine,
                       manifest["scenario"]["gas"]["block_gas_limit"])

    # block-by-block re-validation
    blocks: list[Block] = []
    chain_path = run / "chain.jsonl"
    try:
        lines = chain_path.read_text().splitlines()
    except OSError as exc:
        return Violation("chain", str(chain_path), str(exc))
    for lineno, line in enumerate(lines):
        try:
            block, claimed = block_from_json_line(line)
        except Exception as exc:  # noqa: BLE001 - any corruption counts
            return Violation("block-decode",
                             f"block height {lineno} (line {lineno + 1})",
                             f"undecodable: {exc}")
        if hash_header(block.header) != claimed:
            return Violation("block-hash",
                             f"block height {lineno} (line {lineno + 1})",
                             "stored hash does not match header")
        if lineno == 0:
            if hash_header(block.header) != hash_header(genesis.header):
                return Violation("genesis",
                                 "block height 0 (line 1)",
                                 "chain file starts from a foreign genesis")
            blocks.append(block)
            continue
        try:
            chain.append_block(block)
        except ChainError as exc:
            return Violation("block-invalid",
                             f"block height {block.header.height} "
                             f"(line {lineno + 1})",
                             f"{type(exc).__name__}: {exc}")
        blocks.append(block)

    # event log must be exactly the chain's replay
    faithful = bool(manifest.get("faithful"))
    derived = RegistryState(faithful=faithful)
    derived_events = []
    for block in blocks[1:]:
        for tx in block.transactions:
            _, _, action = derived.set_device_data(
                tx.args[0], tx.args[1], block.header.timestamp)
            derived_events.append(action)
    events_path = run / "events.jsonl"
    try:
        event_lines = events_path.read_text().splitlines()
    except OSError as exc:
        return Violation("events", str(events_path), str(exc))
    logged = []
    for lineno, line in enumerate(event_lines, start=1):
        try:
            logged.append(LogAction.from_json_line(line))
        except Exception as exc:  # noqa: BLE001
            return Violation("event-decode", f"events.jsonl line {lineno}",
                             f"undecodable: {exc}")
    if logged != derived_events:
        length = min(len(logged), len(derived_events))
        lineno = length + 1
        for i in range(length):
            if logged[i] != derived_events[i]:
                lineno = i + 1
                break
        return Violation("event-mismatch", f"events.jsonl line {lineno}",
                         "event log does not match the chain replay")
    replayed = RegistryState.replay_events(logged, faithful=faithful)
    if replayed.fingerprint() != derived.fingerprint():
        return Violation("event-replay", "events.jsonl",
                         "replaying the event log does not reproduce the "
                         "registry state")

    # every referenced chunk must exist and hash to its handle
    chunks = run / "chunks"
    for lineno, event in enumerate(logged, start=1):
        chunk_path = chunks / event.filehash.hex()
        if not chunk_path.exists():
            return Violation("chunk-missing",
                             f"events.jsonl line {lineno}",
                             f"chunk {event.filehash.hex()} not on disk")
        if sha256(chunk_path.read_bytes()) != event.filehash:
            return Violation("chunk-corrupt",
                             f"chunks/{event.filehash.hex()}",
                             "content does not hash to its handle")
    return None
