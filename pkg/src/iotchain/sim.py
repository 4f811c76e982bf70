"""Deterministic discrete-event simulation of the whole pipeline.

One event loop drives everything: device emissions, channel-serialized
frame arrivals, smart-proxy ingestion into the chunk store, mempool
packing, block sealing under the configured consensus engine, propagation
between miner nodes, registry application and event fanout. The clock is
integer milliseconds; every delay is rounded up onto that grid, and all
randomness flows from seeds derived off the scenario seed, so a scenario
plus seed fully determines every artifact byte.

Node topology is deliberately small: each proof-of-work miner keeps its
own chain view and blocks propagate with a configured delay (that is where
temporary forks come from); stake and BFT runs drive a single shared view.
Node 0 is the observer whose canonical chain defines registry state,
events and metrics. A single logical mempool feeds all miners; packing
skips transactions already on the packing branch, which also re-includes
transactions orphaned by a reorg.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from ._kernels import sha256
from .chain import (
    Block,
    BlockHeader,
    BlockRecord,
    ChainState,
    ChainError,
    Transaction,
    compute_tx_root,
    hash_header,
    make_genesis,
)
from .consensus import (
    CommitCertificate,
    Difficulty,
    PbftConfig,
    PbftEngine,
    PosEngine,
    PosSeal,
    PowEngine,
    StakeTable,
    pbft_decide,
    pbft_proposal_digest,
    pow_seal,
    sign_vote,
)
from .encoding import enc_u64
from .keys import KeyPair, generate_keypair
from .lpwan import (
    ClientMode,
    EndDevice,
    FullNodeView,
    Gateway,
    GatewayRole,
    NonceCounter,
    Power,
    SmartProxy,
    TECHS,
    ThinClient,
)
from .metrics import MetricsReport, dist_summary, throughput_model
from .registry import EventBus, GasSchedule, LogAction, RegistryState
from .scenario import Scenario
from .store import StoreCluster

RETRY_INTERVAL_MS = 1000


@dataclass
class NodeCtx:
    """One full node's view: chain state plus mining bookkeeping."""

    index: int
    chain: ChainState
    mining_token: int = 0
    active: bool = False  # a sealing attempt is scheduled
    candidate_full: bool = False  # current template is at gas capacity
    pending: dict[bytes, list[Block]] = field(default_factory=dict)


class MempoolTracker:
    """Single logical mempool over every enqueued transaction.

    Transactions stay in the pool for the whole run; packing walks the
    enqueue order and takes whatever the packing branch has not included
    yet, so a reorged-out transaction is re-included automatically and
    replay is impossible (nonces already on the branch are skipped).
    """

    def __init__(self, schedule: GasSchedule):
        self.schedule = schedule
        self.txs: list[Transaction] = []
        self.meta: dict[bytes, dict] = {}
        self.committed = 0  # txs on the observer's canonical chain

    def add(self, tx: Transaction, meta: dict) -> None:
        self.txs.append(tx)
        self.meta[tx.tx_id] = meta

    def pack(self, parent: BlockRecord) -> tuple[Transaction, ...]:
        expected = dict(parent.nonces)
        packed: list[Transaction] = []
        gas = 0
        limit = self.schedule.block_gas_limit
        for tx in self.txs:
            if gas + tx.gas_used > limit:
                break
            if tx.nonce == expected.get(tx.sender, -1) + 1:
                packed.append(tx)
                expected[tx.sender] = tx.nonce
                gas += tx.gas_used
        return tuple(packed)

    @property
    def enqueued(self) -> int:
        return len(self.txs)

    @property
    def uncommitted(self) -> int:
        return len(self.txs) - self.committed


@dataclass
class SimResult:
    report: MetricsReport
    canonical_blocks: list[Block]
    events: list[LogAction]
    trace: list[dict]
    registry: RegistryState
    store: StoreCluster
    manifest: dict
    per_block_rows: list[dict]
    nodes: list[NodeCtx]
    thin_clients: list[ThinClient]


class Simulation:
    """Build and run one scenario. Construct fresh for every run."""

    def __init__(self, scenario: Scenario, faithful: bool = False,
                 seed_override: Optional[int] = None):
        self.sc = scenario
        self.seed = scenario.seed if seed_override is None else seed_override
        self.faithful = faithful
        self.now_ms = 0
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.trace: list[dict] = []
        self.counts = {
            "frames_emitted": 0,
            "frames_lost": 0,
            "frames_received": 0,
            "duplicates_dropped": 0,
            "chunks_stored": 0,
            "txs_enqueued": 0,
            "txs_committed": 0,
            "events_committed": 0,
            "events_delivered": 0,
            "retry_buffer_drops": 0,
        }
        self._loss_rng = random.Random(self._derive_int(b"loss"))
        self._in_flight_frames = 0
        self._emit_meta: dict[tuple[bytes, bytes], int] = {}
        self._published: set[bytes] = set()
        self._retry_scheduled: set[int] = set()
        self._mining_started = False

        self._build_store()
        self._build_consensus()
        self._build_edge()

        self.gas_schedule = GasSchedule(self.sc.gas["per_tx_gas"],
                                        self.sc.gas["block_gas_limit"])
        self.mempool = MempoolTracker(self.gas_schedule)
        self.registry = RegistryState(faithful=self.faithful)
        self.bus = EventBus()
        self._last_head = self.observer.chain.head

    # --- seeded derivation -------------------------------------------------

    def _material(self, label: bytes) -> bytes:
        return b"iotchain-sim" + enc_u64(self.seed) + label

    def _derive_int(self, label: bytes) -> int:
        return int.from_bytes(sha256(self._material(label))[:8], "big")

    def _keypair(self, label: bytes) -> KeyPair:
        return generate_keypair(self._material(label))

    # --- construction -------------------------------------------------------

    def _build_store(self) -> None:
        cfg = self.sc.store
        self.store = StoreCluster(
            [f"store-{i}" for i in range(cfg["nodes"])],
            replication_factor=cfg["replicas"])

    def _build_consensus(self) -> None:
        cfg = self.sc.consensus
        kind = cfg["kind"]
        self.genesis = make_genesis(timestamp=0)
        gas_limit = self.sc.gas["block_gas_limit"]
        self.validator_keypairs: list[KeyPair] = []

        if kind == "pow":
            pw = cfg["pow"]
            expected_attempts = pw["hashrate"] * cfg["target_interval_s"]
            self.engine = PowEngine(
                target_interval_s=cfg["target_interval_s"],
                initial_difficulty=Difficulty.from_expected_attempts(
                    max(1.0, expected_attempts)),
                retarget_window=pw["retarget_window"])
            n_nodes = pw["miners"]
        elif kind == "pos":
            stakes = self.sc.consensus["pos"]["stakes"]
            self.validator_keypairs = [
                self._keypair(b"validator-%d" % i) for i in range(len(stakes))]
            table = StakeTable({kp.address: amount for kp, amount
                                in zip(self.validator_keypairs, stakes)})
            self.engine = PosEngine(table)
            n_nodes = 1
        else:
            pb = cfg["pbft"]
            self.validator_keypairs = [
                self._keypair(b"validator-%d" % i)
                for i in range(pb["validators"])]
            config = PbftConfig(
                tuple(kp.address for kp in self.validator_keypairs),
                f=pb["f"])
            self.engine = PbftEngine(config)
            n_nodes = 1

        self.nodes = [
            NodeCtx(i, ChainState(self.genesis, self.engine, gas_limit))
            for i in range(n_nodes)]
        self.observer = self.nodes[0]

    def _build_edge(self) -> None:
        dcfg = self.sc.devices
        gcfg = self.sc.gateways
        tech = TECHS[dcfg["tech"]]
        power = Power(dcfg["power"])
        mode = ClientMode(dcfg["client_mode"])
        self.nonces = NonceCounter()
        self.gateways: list[Gateway] = []
        self.thin_clients: list[ThinClient] = []
        role = GatewayRole(gcfg["role"])
        for g in range(gcfg["count"]):
            keypair = self._keypair(b"gateway-%d" % g)
            proxy = SmartProxy(keypair, self.store, self.nonces,
                               self._submit_tx,
                               per_tx_gas=self.sc.gas["per_tx_gas"])
            self.gateways.append(Gateway(keypair, role, proxy))
            if role is GatewayRole.THIN_CLIENT:
                self.thin_clients.append(ThinClient())
        self.devices: list[EndDevice] = []
        self.device_gateway: dict[bytes, Gateway] = {}
        self.max_uplinks = dcfg["max_uplinks"]
        for d in range(dcfg["count"]):
            device = EndDevice(self._keypair(b"device-%d" % d), power, mode,
                               tech, dcfg["emit_period_s"],
                               dcfg["payload_len"],
                               self._material(b"payload-stream"))
            # devices take turns: phase-stagger first emissions across the
            # period so aggregate supply is continuous, not bursty
            device.next_emit_ms = (d * device.emit_period_ms) // max(
                1, dcfg["count"])
            self.devices.append(device)
            self.device_gateway[device.address] = \
                self.gateways[d % len(self.gateways)]

    # --- event queue ----------------------------------------------------------

    def schedule(self, at_ms: int, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (max(at_ms, self.now_ms), self._seq, fn))

    def _trace(self, stage: str, **fields) -> None:
        entry = {"t_ms": self.now_ms, "stage": stage}
        entry.update(fields)
        self.trace.append(entry)

    # --- edge pipeline ----------------------------------------------------------

    def _emissions_done(self, device: EndDevice) -> bool:
        if self.max_uplinks and device.seq >= self.max_uplinks:
            return True
        if self.sc.duration_s is not None:
            return device.next_emit_ms > int(self.sc.duration_s * 1000)
        return self._blocks_target_reached()

    def _device_emit(self, device: EndDevice) -> None:
        if self.sc.duration_blocks is not None and self._blocks_target_reached():
            return  # block production is winding down; stop emitting
        frame = device.tick(self.now_ms)
        if frame is None:
            return
        gateway = self.device_gateway[device.address]
        self.counts["frames_emitted"] += 1
        self._trace("emit", device=device.address.hex()[:12], seq=frame.seq)
        self._emit_meta[(device.address, sha256(frame.payload))] = \
            frame.emitted_at_ms
        loss = self.sc.network["loss_probability"]
        if loss > 0 and self._loss_rng.random() < loss:
            self.counts["frames_lost"] += 1
        else:
            arrival = gateway.schedule_arrival(frame)
            self._in_flight_frames += 1
            self.schedule(arrival,
                          lambda: self._frame_arrival(gateway, device, frame))
        if not self._emissions_done(device):
            self.schedule(device.next_emit_ms,
                          lambda: self._device_emit(device))

    def _frame_arrival(self, gateway: Gateway, device: EndDevice, frame) -> None:
        self._in_flight_frames -= 1
        self._trace("receive", device=device.address.hex()[:12],
                    seq=frame.seq)
        before = gateway.duplicates_dropped
        tx_id = gateway.receive(frame, device)
        if gateway.duplicates_dropped > before:
            self.counts["duplicates_dropped"] += 1
            return
        if tx_id is None and gateway.proxy.buffer:
            self._ensure_retry(gateway)

    def _ensure_retry(self, gateway: Gateway) -> None:
        gw_key = id(gateway)
        if gw_key in self._retry_scheduled:
            return
        self._retry_scheduled.add(gw_key)

        def pump():
            self._retry_scheduled.discard(gw_key)
            gateway.proxy.retry_tick()
            if gateway.proxy.buffer:
                self._ensure_retry(gateway)

        self.schedule(self.now_ms + RETRY_INTERVAL_MS, pump)

    def _submit_tx(self, tx: Transaction) -> None:
        meta_key = (tx.args[0], tx.args[1])  # (device, payload digest)
        emit_ms = self._emit_meta.get(meta_key)
        self.counts["txs_enqueued"] += 1
        self._trace("store", handle=tx.args[1].hex()[:12])
        self._trace("enqueue", tx=tx.tx_id.hex()[:12])
        self.mempool.add(tx, {"emit_ms": emit_ms,
                              "enqueue_ms": self.now_ms,
                              "device": tx.args[0]})
        if self.sc.consensus["kind"] == "pow" and self._mining_started:
            # refresh any template with spare gas capacity; the nonce
            # search is memoryless, so restarting does not bias block times
            for node in self.nodes:
                if not node.active or not node.candidate_full:
                    node.mining_token += 1
                    self._start_mining(node)

    # --- stop conditions -----------------------------------------------------------

    def _blocks_target_reached(self) -> bool:
        return (self.sc.duration_blocks is not None
                and self.observer.chain.head.height >= self.sc.duration_blocks)

    def _pipeline_empty(self) -> bool:
        if self._in_flight_frames > 0:
            return False
        if any(gw.proxy.buffer for gw in self.gateways):
            return False
        return self.mempool.uncommitted == 0

    def _production_done(self) -> bool:
        if self.sc.duration_blocks is not None:
            if not self._blocks_target_reached():
                return False
            return not self.sc.drain_mempool or self._pipeline_empty()
        if self.now_ms < int(self.sc.duration_s * 1000):
            return False
        return not self.sc.drain_mempool or self._pipeline_empty()

    # --- commit bookkeeping (observer canonical view) ---------------------------------

    def _check_observer_head(self) -> None:
        head = self.observer.chain.head
        if head is self._last_head:
            return
        old = self._last_head
        self._last_head = head
        if self._is_ancestor(old, head):
            for rec in self._path_down(head, old):
                self._commit_block(rec)
                for client in self.thin_clients:
                    client.accept_header(rec.header)
        else:
            # reorg: rebuild registry state and commit accounting from
            # scratch along the new canonical branch
            self.registry = RegistryState(faithful=self.faithful)
            self.mempool.committed = 0
            canonical = self.observer.chain.canonical()
            for rec in canonical[1:]:
                self._commit_block(rec)
            view = FullNodeView(self.observer.chain)
            for client in self.thin_clients:
                client.sync_from(view)

    @staticmethod
    def _is_ancestor(maybe_ancestor: BlockRecord, rec: BlockRecord) -> bool:
        cur: Optional[BlockRecord] = rec
        while cur is not None and cur.height >= maybe_ancestor.height:
            if cur is maybe_ancestor:
                return True
            cur = cur.parent
        return False

    @staticmethod
    def _path_down(rec: BlockRecord, ancestor: BlockRecord) -> list[BlockRecord]:
        path = []
        cur: Optional[BlockRecord] = rec
        while cur is not None and cur is not ancestor:
            path.append(cur)
            cur = cur.parent
        path.reverse()
        return path

    def _commit_block(self, rec: BlockRecord) -> None:
        actions = []
        for tx in rec.block.transactions:
            _, _, action = self.registry.set_device_data(
                tx.args[0], tx.args[1], rec.header.timestamp)
            actions.append(action)
            self.mempool.committed += 1
        if rec.hash not in self._published:
            self._published.add(rec.hash)
            for tx in rec.block.transactions:
                self._trace("commit", tx=tx.tx_id.hex()[:12],
                            height=rec.height)
            if actions:
                self.bus.publish(actions)
                for action in actions:
                    self._trace("event", device=action.device_id.hex()[:12],
                                ts=action.timestamp)

    # --- proof-of-work production ---------------------------------------------------------

    def _pow_cfg(self) -> dict:
        return self.sc.consensus["pow"]

    def _start_mining(self, node: NodeCtx) -> None:
        if self._production_done():
            node.active = False
            return
        parent = node.chain.head
        txs = self.mempool.pack(parent)
        gas_packed = sum(tx.gas_used for tx in txs)
        node.candidate_full = (self.gas_schedule.block_gas_limit - gas_packed
                               < self.gas_schedule.per_tx_gas)
        node.active = True
        ts = max(parent.header.timestamp + 1, self.now_ms // 1000)
        header = BlockHeader(parent.hash, compute_tx_root(txs), ts,
                             parent.height + 1, b"")
        difficulty = self.engine.difficulty_for_child(parent)
        start_nonce = self._derive_int(
            b"pow-nonce" + enc_u64(node.index) + enc_u64(node.mining_token)
            + parent.hash)
        seal, attempts = pow_seal(header, difficulty,
                                  self._pow_cfg()["attempt_budget"],
                                  start_nonce=start_nonce)
        token = node.mining_token
        if seal is None:
            # budget exhausted: treat as that much mining time, then retry
            delay = max(1, math.ceil(attempts / self._pow_cfg()["hashrate"] * 1000))
            self.schedule(self.now_ms + delay,
                          lambda: self._retry_mining(node, token))
            return
        sealed = BlockHeader(header.parent_hash, header.tx_root,
                             header.timestamp, header.height, seal.to_bytes())
        block = Block(sealed, txs)
        mine_ms = max(1, math.ceil(attempts / self._pow_cfg()["hashrate"] * 1000))
        self.schedule(self.now_ms + mine_ms,
                      lambda: self._complete_mining(node, block, token))

    def _retry_mining(self, node: NodeCtx, token: int) -> None:
        if node.mining_token == token:
            self._start_mining(node)

    def _complete_mining(self, node: NodeCtx, block: Block, token: int) -> None:
        if node.mining_token != token:
            return  # head moved under us; this work was abandoned
        node.mining_token += 1
        node.chain.append_block(block, now_ms=self.now_ms)
        if node is self.observer:
            self._check_observer_head()
        delay = self._pow_cfg()["propagation_delay_ms"]
        for other in self.nodes:
            if other is not node:
                self.schedule(self.now_ms + delay,
                              lambda n=other, b=block: self._deliver(n, b))
        self._start_mining(node)

    def _deliver(self, node: NodeCtx, block: Block) -> None:
        if block.header.parent_hash not in node.chain:
            node.pending.setdefault(block.header.parent_hash, []).append(block)
            return
        old_head = node.chain.head
        node.chain.append_block(block, now_ms=self.now_ms)
        self._flush_pending(node, hash_header(block.header))
        if node is self.observer:
            self._check_observer_head()
        if node.chain.head is not old_head:
            node.mining_token += 1
            self._start_mining(node)

    def _flush_pending(self, node: NodeCtx, parent_hash: bytes) -> None:
        for waiting in node.pending.pop(parent_hash, []):
            self._deliver(node, waiting)

    # --- proof-of-stake production -----------------------------------------------------------

    def _interval_ms(self) -> int:
        return max(1, math.ceil(self.sc.consensus["target_interval_s"] * 1000))

    def _pos_slot(self) -> None:
        if self._production_done():
            return
        chain = self.observer.chain
        parent = chain.head
        validator = self.engine.select_proposer(parent.hash, parent.height + 1)
        txs = self.mempool.pack(parent)
        ts = max(parent.header.timestamp + 1, self.now_ms // 1000)
        header = BlockHeader(parent.hash, compute_tx_root(txs), ts,
                             parent.height + 1, PosSeal(validator).to_bytes())
        chain.append_block(Block(header, txs), now_ms=self.now_ms)
        self._check_observer_head()
        self.schedule(self.now_ms + self._interval_ms(), self._pos_slot)

    # --- BFT production -------------------------------------------------------------------------

    def _pbft_round(self, height: int, round_: int) -> None:
        if self._production_done():
            return
        chain = self.observer.chain
        if chain.head.height >= height:
            return  # height already decided by an earlier round
        offline = set(self.sc.consensus["pbft"]["offline"])
        n = len(self.validator_keypairs)
        proposer_idx = (height + round_) % n
        if proposer_idx in offline:
            # proposer timeout: skip to the next proposer for this height
            timeout = self.sc.consensus["pbft"]["proposer_timeout_ms"]
            self._trace("proposer_timeout", height=height, round=round_)
            self.schedule(self.now_ms + timeout,
                          lambda: self._pbft_round(height, round_ + 1))
            return
        parent = chain.head
        txs = self.mempool.pack(parent)
        ts = max(parent.header.timestamp + 1, self.now_ms // 1000)
        header = BlockHeader(parent.hash, compute_tx_root(txs), ts, height, b"")
        digest = pbft_proposal_digest(header)
        votes = [sign_vote(kp, digest)
                 for i, kp in enumerate(self.validator_keypairs)
                 if i not in offline]
        cert = pbft_decide(digest, votes, self.engine.config)
        assert cert is not None  # scenario validation bounds offline <= f
        sealed = BlockHeader(header.parent_hash, header.tx_root,
                             header.timestamp, header.height, cert.to_bytes())
        chain.append_block(Block(sealed, txs), now_ms=self.now_ms)
        self._check_observer_head()
        self.schedule(self.now_ms + self._interval_ms(),
                      lambda: self._pbft_round(height + 1, 0))

    # --- run -----------------------------------------------------------------------------------------

    def run(self) -> SimResult:
        for device in self.devices:
            self.schedule(device.next_emit_ms,
                          lambda d=device: self._device_emit(d))

        kind = self.sc.consensus["kind"]
        if kind == "pow":
            start_ms = self._pow_cfg()["mining_start_ms"]

            def bring_miners_online():
                self._mining_started = True
                for node in self.nodes:
                    self._start_mining(node)

            self.schedule(start_ms, bring_miners_online)
        elif kind == "pos":
            self.schedule(self._interval_ms(), self._pos_slot)
        else:
            self.schedule(self._interval_ms(),
                          lambda: self._pbft_round(1, 0))

        outage_start = self.sc.store["outage_start_ms"]
        if outage_start is not None:
            victims = list(self.store.up)[:self.sc.store["outage_nodes"]]

            def fail_all():
                for node in victims:
                    self.store.fail_node(node)

            def recover_all():
                for node in victims:
                    self.store.recover_node(node)

            self.schedule(outage_start, fail_all)
            self.schedule(self.sc.store["outage_end_ms"], recover_all)

        while self._queue:
            t, _, fn = heapq.heappop(self._queue)
            self.now_ms = max(self.now_ms, t)
            fn()

        return self._finalize()

    # --- metrics and artifacts --------------------------------------------------------------------------

    def _finalize(self) -> SimResult:
        chain = self.observer.chain
        canonical = chain.canonical()
        blocks = [rec.block for rec in canonical]

        # authoritative event log: replay the canonical chain into a fresh
        # registry, then cross-check against the incrementally held state
        final_registry = RegistryState(faithful=self.faithful)
        events: list[LogAction] = []
        for rec in canonical[1:]:
            for tx in rec.block.transactions:
                _, _, action = final_registry.set_device_data(
                    tx.args[0], tx.args[1], rec.header.timestamp)
                events.append(action)
        assert final_registry.fingerprint() == self.registry.fingerprint()

        total_txs = sum(len(rec.block.transactions) for rec in canonical)
        tx_counts = [len(rec.block.transactions) for rec in canonical[1:]]
        intervals = [child.header.timestamp - parent.header.timestamp
                     for parent, child in zip(canonical, canonical[1:])]
        duration_s = max(1, canonical[-1].header.timestamp
                         - canonical[0].header.timestamp)

        latencies = []
        for rec in canonical[1:]:
            for tx in rec.block.transactions:
                meta = self.mempool.meta.get(tx.tx_id)
                if meta and meta.get("emit_ms") is not None:
                    latencies.append(rec.accepted_at_ms - meta["emit_ms"])

        self.counts["frames_received"] = sum(g.received for g in self.gateways)
        self.counts["duplicates_dropped"] = sum(g.duplicates_dropped
                                                for g in self.gateways)
        self.counts["chunks_stored"] = sum(g.proxy.stored for g in self.gateways)
        self.counts["retry_buffer_drops"] = sum(g.proxy.buffer_drops
                                                for g in self.gateways)
        self.counts["txs_committed"] = total_txs
        self.counts["events_committed"] = len(events)
        self.counts["events_delivered"] = self.bus.delivered

        fork_heights = chain.fork_heights()
        converged = all(node.chain.head.hash == chain.head.hash
                        for node in self.nodes)

        notes = []
        model = throughput_model(self.gas_schedule.block_gas_limit,
                                 self.gas_schedule.per_tx_gas,
                                 self.sc.consensus["target_interval_s"])
        if model.note:
            notes.append(model.note)

        per_block_rows = []
        for parent, rec in zip(canonical, canonical[1:]):
            per_block_rows.append({
                "height": rec.height,
                "timestamp_s": rec.header.timestamp,
                "tx_count": len(rec.block.transactions),
                "gas_used": sum(tx.gas_used for tx in rec.block.transactions),
                "interval_s": rec.header.timestamp - parent.header.timestamp,
                "hash": rec.hash.hex(),
            })

        report = MetricsReport(
            scenario_name=self.sc.name,
            seed=self.seed,
            consensus=self.sc.consensus["kind"],
            faithful_mode=self.faithful,
            blocks=len(canonical) - 1,
            total_txs=total_txs,
            duration_s=duration_s,
            tps=total_txs / duration_s,
            tx_per_minute=60.0 * total_txs / duration_s,
            tx_per_block=dist_summary([float(c) for c in tx_counts]),
            block_time_s=dist_summary([float(i) for i in intervals]),
            fork_count=len(fork_heights),
            max_fork_depth=chain.max_abandoned_depth(),
            converged=converged,
            latency_ms=dist_summary([float(v) for v in latencies]),
            counts=dict(self.counts),
            registry={
                "mode": "faithful" if self.faithful else "dedup",
                "device_count": final_registry.get_device_count(),
            },
            gas={
                "per_tx_gas": self.gas_schedule.per_tx_gas,
                "block_gas_limit": self.gas_schedule.block_gas_limit,
                "model_tx_per_block": model.tx_per_block,
                "model_tps": round(model.tps, 6),
            },
            notes=notes,
        )
        return SimResult(
            report=report,
            canonical_blocks=blocks,
            events=events,
            trace=self.trace,
            registry=final_registry,
            store=self.store,
            manifest=self._manifest(),
            per_block_rows=per_block_rows,
            nodes=self.nodes,
            thin_clients=self.thin_clients,
        )

    def _manifest(self) -> dict:
        doc = {
            "format": 1,
            "scenario": self.sc.to_dict(),
            "seed": self.seed,
            "faithful": self.faithful,
            "hash_function": "sha256",
            "signature_scheme": "ed25519",
            "genesis_hash": hash_header(self.genesis.header).hex(),
        }
        kind = self.sc.consensus["kind"]
        if kind == "pow":
            doc["pow"] = {
                "initial_threshold": format(
                    self.engine.initial_difficulty.threshold, "x"),
                "retarget_window": self.engine.retarget_window,
                "target_interval_s": self.engine.target_interval_s,
            }
        elif kind == "pos":
            doc["pos"] = {
                "stakes": {kp.address.hex(): amount
                           for kp, amount in zip(
                               self.validator_keypairs,
                               self.sc.consensus["pos"]["stakes"])},
            }
        else:
            doc["pbft"] = {
                "validators": [kp.address.hex()
                               for kp in self.validator_keypairs],
                "f": self.sc.consensus["pbft"]["f"],
            }
        return doc


def run_simulation(scenario: Scenario, seed_override: Optional[int] = None,
                   faithful: bool = False) -> SimResult:
    return Simulation(scenario, faithful=faithful,
                      seed_override=seed_override).run()


def compare_modes(scenario: Scenario,
                  seed_override: Optional[int] = None) -> dict:
    """Replay one run's committed registry calls under both write
    semantics and report how the device index diverges."""
    result = run_simulation(scenario, seed_override=seed_override)
    calls = []
    for block in result.canonical_blocks:
        for tx in block.transactions:
            calls.append((tx.args[0], tx.args[1], block.header.timestamp))
    dedup, faithful = RegistryState(), RegistryState(faithful=True)
    for device, handle, ts in calls:
        dedup.set_device_data(device, handle, ts)
        faithful.set_device_data(device, handle, ts)
    return {
        "calls": len(calls),
        "dedup_device_count": dedup.get_device_count(),
        "faithful_device_count": faithful.get_device_count(),
        "distinct_devices": len({c[0] for c in calls}),
    }
