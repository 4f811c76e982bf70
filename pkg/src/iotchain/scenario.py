"""Scenario files: flat key-value tables with a strict, versioned schema.

A scenario fully determines a run. Files are INI text (sections as
tables), every key is validated against the schema below, and unknown
sections or keys are hard errors so a typo cannot silently change an
experiment. ``Scenario.to_dict`` round-trips through the run manifest so
audits can rebuild the exact configuration without the original file.
"""

from __future__ import annotations

from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

SCHEMA_VERSION = 1

CONSENSUS_KINDS = ("pow", "pos", "pbft")
TECH_KEYS = ("lora", "sigfox", "nbiot", "emtc", "ecgsm")
POWER_KEYS = ("battery", "always-on")
CLIENT_MODES = ("plain-sensor", "server-trusting", "thin-client")
GATEWAY_ROLES = ("full-node", "thin-client")


class ConfigInvalid(ValueError):
    """Scenario rejected; the message names the offending field."""


def _parse_bool(raw: str, where: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigInvalid(f"{where}: expected a boolean, got {raw!r}")


def _parse_int(raw: str, where: str) -> int:
    try:
        return int(raw.replace("_", ""), 10)
    except ValueError:
        raise ConfigInvalid(f"{where}: expected an integer, got {raw!r}")


def _parse_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigInvalid(f"{where}: expected a number, got {raw!r}")


def _parse_int_list(raw: str, where: str) -> list[int]:
    raw = raw.strip()
    if not raw:
        return []
    return [_parse_int(part.strip(), where) for part in raw.split(",")]


def _parse_choice(choices):
    def parse(raw: str, where: str) -> str:
        value = raw.strip()
        if value not in choices:
            raise ConfigInvalid(
                f"{where}: {value!r} is not one of {', '.join(choices)}")
        return value
    return parse


_REQUIRED = object()

# section -> key -> (parser, default); _REQUIRED means the key must appear
_SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {
        "schema_version": (_parse_int, _REQUIRED),
        "name": (lambda raw, where: raw.strip(), ""),
        "seed": (_parse_int, _REQUIRED),
        "duration_blocks": (_parse_int, None),
        "duration_s": (_parse_float, None),
        "drain_mempool": (_parse_bool, True),
    },
    "consensus": {
        "kind": (_parse_choice(CONSENSUS_KINDS), _REQUIRED),
        "target_interval_s": (_parse_float, 14.0),
    },
    "consensus.pow": {
        "miners": (_parse_int, 1),
        "hashrate": (_parse_float, 600.0),
        "retarget_window": (_parse_int, 16),
        "attempt_budget": (_parse_int, 50_000_000),
        "propagation_delay_ms": (_parse_int, 50),
        "mining_start_ms": (_parse_int, 0),
    },
    "consensus.pos": {
        "stakes": (_parse_int_list, [1]),
    },
    "consensus.pbft": {
        "validators": (_parse_int, 4),
        "f": (_parse_int, 1),
        "proposer_timeout_ms": (_parse_int, 2000),
        "offline": (_parse_int_list, []),
    },
    "gas": {
        "per_tx_gas": (_parse_int, 21_000),
        "block_gas_limit": (_parse_int, 4_712_388),
    },
    "store": {
        "nodes": (_parse_int, 6),
        "replicas": (_parse_int, 3),
        "outage_start_ms": (_parse_int, None),
        "outage_end_ms": (_parse_int, None),
        "outage_nodes": (_parse_int, 0),
    },
    "devices": {
        "count": (_parse_int, 10),
        "tech": (_parse_choice(TECH_KEYS), "lora"),
        "emit_period_s": (_parse_float, 900.0),
        "payload_len": (_parse_int, 12),
        "power": (_parse_choice(POWER_KEYS), "battery"),
        "client_mode": (_parse_choice(CLIENT_MODES), "plain-sensor"),
        "max_uplinks": (_parse_int, 0),  # 0 = unlimited
    },
    "gateways": {
        "count": (_parse_int, 1),
        "role": (_parse_choice(GATEWAY_ROLES), "full-node"),
    },
    "network": {
        "loss_probability": (_parse_float, 0.0),
    },
}


@dataclass
class Scenario:
    """Parsed, validated scenario. Field layout mirrors the file."""

    name: str
    seed: int
    duration_blocks: Optional[int]
    duration_s: Optional[float]
    drain_mempool: bool
    consensus: dict[str, Any]
    gas: dict[str, int]
    store: dict[str, Any]
    devices: dict[str, Any]
    gateways: dict[str, Any]
    network: dict[str, Any]
    source: str = field(default="", compare=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "duration_blocks": self.duration_blocks,
            "duration_s": self.duration_s,
            "drain_mempool": self.drain_mempool,
            "consensus": self.consensus,
            "gas": self.gas,
            "store": self.store,
            "devices": self.devices,
            "gateways": self.gateways,
            "network": self.network,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigInvalid(
                f"schema_version: expected {SCHEMA_VERSION}, "
                f"got {doc.get('schema_version')!r}")
        return cls(
            name=doc["name"],
            seed=int(doc["seed"]),
            duration_blocks=doc.get("duration_blocks"),
            duration_s=doc.get("duration_s"),
            drain_mempool=bool(doc.get("drain_mempool", True)),
            consensus=dict(doc["consensus"]),
            gas=dict(doc["gas"]),
            store=dict(doc["store"]),
            devices=dict(doc["devices"]),
            gateways=dict(doc["gateways"]),
            network=dict(doc["network"]),
        )


def _collect(parser: ConfigParser, path_label: str) -> dict[str, dict[str, Any]]:
    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigInvalid(
                f"{path_label}: unknown section [{section}]")
        keys = _SCHEMA[section]
        out: dict[str, Any] = {}
        for key, raw in parser[section].items():
            if key not in keys:
                raise ConfigInvalid(
                    f"{path_label}: unknown key {key!r} in [{section}]")
            fn, _ = keys[key]
            out[key] = fn(raw, f"[{section}] {key}")
        values[section] = out
    for section, keys in _SCHEMA.items():
        out = values.setdefault(section, {})
        for key, (fn, default) in keys.items():
            if key not in out:
                if default is _REQUIRED:
                    raise ConfigInvalid(
                        f"{path_label}: missing required key {key!r} "
                        f"in [{section}]")
                out[key] = default
    return values


def _cross_validate(v: dict[str, dict[str, Any]], label: str) -> None:
    def bad(msg: str):
        raise ConfigInvalid(f"{label}: {msg}")

    sc = v["scenario"]
    if sc["schema_version"] != SCHEMA_VERSION:
        bad(f"schema_version {sc['schema_version']} unsupported "
            f"(this build reads version {SCHEMA_VERSION})")
    if (sc["duration_blocks"] is None) == (sc["duration_s"] is None):
        bad("exactly one of duration_blocks / duration_s must be set")
    if sc["duration_blocks"] is not None and sc["duration_blocks"] < 1:
        bad("duration_blocks must be at least 1")
    if sc["duration_s"] is not None and sc["duration_s"] <= 0:
        bad("duration_s must be positive")
    if not 0 <= sc["seed"] < 2**64:
        bad("seed must fit in 64 bits")

    if v["consensus"]["target_interval_s"] <= 0:
        bad("[consensus] target_interval_s must be positive")
    kind = v["consensus"]["kind"]
    if kind == "pow":
        pow_cfg = v["consensus.pow"]
        if pow_cfg["miners"] < 1:
            bad("[consensus.pow] miners must be at least 1")
        if pow_cfg["hashrate"] <= 0:
            bad("[consensus.pow] hashrate must be positive")
        if pow_cfg["retarget_window"] < 1:
            bad("[consensus.pow] retarget_window must be at least 1")
        if pow_cfg["mining_start_ms"] < 0:
            bad("[consensus.pow] mining_start_ms cannot be negative")
    elif kind == "pos":
        stakes = v["consensus.pos"]["stakes"]
        if not stakes or sum(stakes) <= 0 or min(stakes) < 0:
            bad("[consensus.pos] stakes must be non-negative with a "
                "positive total")
    else:
        pbft = v["consensus.pbft"]
        n, f = pbft["validators"], pbft["f"]
        if f < 0 or n < 3 * f + 1:
            bad(f"[consensus.pbft] {n} validators cannot tolerate f={f} "
                f"(need n >= 3f+1)")
        if len(pbft["offline"]) > f:
            bad("[consensus.pbft] more offline validators than f")
        if any(not 0 <= i < n for i in pbft["offline"]):
            bad("[consensus.pbft] offline indices out of range")

    gas = v["gas"]
    if gas["per_tx_gas"] <= 0 or gas["block_gas_limit"] <= 0:
        bad("[gas] amounts must be positive")
    if gas["per_tx_gas"] > gas["block_gas_limit"]:
        bad("[gas] per_tx_gas exceeds block_gas_limit")

    store = v["store"]
    if store["replicas"] < 1 or store["nodes"] < store["replicas"]:
        bad("[store] needs nodes >= replicas >= 1")
    outage = (store["outage_start_ms"], store["outage_end_ms"])
    if (outage[0] is None) != (outage[1] is None):
        bad("[store] outage_start_ms and outage_end_ms go together")
    if outage[0] is not None and not 0 <= outage[0] < outage[1]:
        bad("[store] outage window must satisfy 0 <= start < end")
    if store["outage_nodes"] > store["nodes"]:
        bad("[store] cannot fail more nodes than exist")

    devices = v["devices"]
    if devices["count"] < 0:
        bad("[devices] count cannot be negative")
    if devices["max_uplinks"] < 0:
        bad("[devices] max_uplinks cannot be negative")
    if not 0 <= devices["payload_len"] <= 255:
        bad("[devices] payload_len must be 0..255")
    if devices["emit_period_s"] <= 0:
        bad("[devices] emit_period_s must be positive")
    allowed = {
        "battery": ("plain-sensor", "server-trusting"),
        "always-on": ("thin-client", "server-trusting"),
    }
    if devices["client_mode"] not in allowed[devices["power"]]:
        bad(f"[devices] a {devices['power']} device cannot run as "
            f"{devices['client_mode']}")

    if v["gateways"]["count"] < 1:
        bad("[gateways] count must be at least 1")

    loss = v["network"]["loss_probability"]
    if not 0.0 <= loss < 1.0:
        bad("[network] loss_probability must be in [0, 1)")


def loads(text: str, label: str = "<string>", name_hint: str = "") -> Scenario:
    parser = ConfigParser(strict=True, interpolation=None)
    try:
        parser.read_string(text)
    except ConfigParserError as exc:
        raise ConfigInvalid(f"{label}: {exc}") from exc
    values = _collect(parser, label)
    _cross_validate(values, label)
    sc = values["scenario"]
    consensus = dict(values["consensus"])
    kind = consensus["kind"]
    consensus[kind] = values[f"consensus.{kind}"]
    return Scenario(
        name=sc["name"] or name_hint or "unnamed",
        seed=sc["seed"],
        duration_blocks=sc["duration_blocks"],
        duration_s=sc["duration_s"],
        drain_mempool=sc["drain_mempool"],
        consensus=consensus,
        gas=dict(values["gas"]),
        store=dict(values["store"]),
        devices=dict(values["devices"]),
        gateways=dict(values["gateways"]),
        network=dict(values["network"]),
        source=label,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"scenario file not found: {path}")
    return loads(path.read_text(), label=str(path), name_hint=path.stem)


def builtin_scenario_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def resolve_scenario(ref: str) -> Scenario:
    """Load from a path, or fall back to a shipped preset by name."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    builtin = builtin_scenario_dir() / f"{ref}.ini"
    if builtin.exists():
        return load_scenario(builtin)
    available = sorted(p.stem for p in builtin_scenario_dir().glob("*.ini"))
    raise ConfigInvalid(
        f"no scenario file {ref!r}; shipped presets: {', '.join(available)}")
