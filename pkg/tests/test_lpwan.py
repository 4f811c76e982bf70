import pytest

from iotchain.chain import (
    BadSignature,
    Block,
    BlockHeader,
    ChainState,
    Transaction,
    compute_tx_root,
    make_genesis,
    make_transaction,
)
from iotchain.keys import generate_keypair
from iotchain.lpwan import (
    ClientMode,
    ClientRefused,
    EndDevice,
    FullNodeView,
    Gateway,
    GatewayRole,
    NonceCounter,
    Power,
    RoleConstraintError,
    SmartProxy,
    TECHS,
    ThinClient,
    UplinkFrame,
    airtime,
    airtime_ms,
    server_trusting_submit,
)
from iotchain.merkle import MerkleProof
from iotchain.registry import SET_DEVICE_DATA
from iotchain.store import StoreCluster


class AcceptAllEngine:
    name = "null"
    final = False

    def verify_seal(self, chain, block, parent):
        pass

    def on_accept(self, chain, record):
        pass


def make_device(label=b"dev-0", power=Power.BATTERY,
                mode=ClientMode.PLAIN_SENSOR, tech="lora", period=900,
                payload_len=12, refuse=False):
    return EndDevice(generate_keypair(label), power, mode, TECHS[tech],
                     period, payload_len, b"scenario-seed", refuse_signing=refuse)


def make_proxy(mempool, store=None):
    store = store or StoreCluster([f"n{i}" for i in range(4)], 3)
    return SmartProxy(generate_keypair(b"gw-0"), store, NonceCounter(),
                      mempool.append, per_tx_gas=21_000), store


# --- link technology table -------------------------------------------------

@pytest.mark.parametrize("key,rate,rng", [
    ("lora", 50_000, 11_000),
    ("sigfox", 100, 13_000),
    ("nbiot", 250_000, 15_000),
    ("emtc", 1_000_000, 11_000),
    ("ecgsm", 140_000, 15_000),
])
def test_connectivity_matrix_values(key, rate, rng):
    tech = TECHS[key]
    assert tech.max_uplink_rate_bps == rate
    assert tech.max_range_m == rng


def test_airtime_twelve_bytes_lora():
    # 96 bits over 50 kbps
    assert airtime(12, TECHS["lora"]) == pytest.approx(0.00192)
    assert airtime_ms(12, TECHS["lora"]) == 2  # ceil to the ms grid


def test_airtime_twelve_bytes_sigfox():
    # 96 bits over 100 bps
    assert airtime(12, TECHS["sigfox"]) == pytest.approx(0.96)


def test_airtime_zero_bytes():
    assert airtime(0, TECHS["lora"]) == 0.0
    with pytest.raises(ValueError):
        airtime(-1, TECHS["lora"])


# --- role matrix ---------------------------------------------------------------

def test_battery_device_cannot_be_thin_client():
    with pytest.raises(RoleConstraintError):
        make_device(power=Power.BATTERY, mode=ClientMode.THIN_CLIENT)


def test_always_on_device_cannot_be_plain_sensor():
    with pytest.raises(RoleConstraintError):
        make_device(power=Power.ALWAYS_ON, mode=ClientMode.PLAIN_SENSOR)


@pytest.mark.parametrize("power,mode", [
    (Power.BATTERY, ClientMode.PLAIN_SENSOR),
    (Power.BATTERY, ClientMode.SERVER_TRUSTING),
    (Power.ALWAYS_ON, ClientMode.SERVER_TRUSTING),
    (Power.ALWAYS_ON, ClientMode.THIN_CLIENT),
])
def test_allowed_role_combinations(power, mode):
    make_device(power=power, mode=mode)


# --- device emission --------------------------------------------------------------

def test_first_tick_emits_sequence_zero():
    device = make_device()
    frame = device.tick(0)
    assert frame is not None
    assert frame.seq == 0
    assert frame.emitted_at_ms == 0


def test_emission_schedule_follows_period():
    device = make_device(period=900)
    emitted = []
    for t in range(0, 2_000_000, 100):
        frame = device.tick(t)
        if frame:
            emitted.append(t)
    assert emitted == [0, 900_000, 1_800_000]


def test_payloads_are_deterministic_and_id_salted():
    a1, a2 = make_device(label=b"a"), make_device(label=b"a")
    b = make_device(label=b"b")
    assert a1.payload_for(0) == a2.payload_for(0)
    assert a1.payload_for(0) != a1.payload_for(1)
    assert a1.payload_for(0) != b.payload_for(0)
    assert len(a1.payload_for(0)) == 12


def test_payload_length_bounds():
    make_device(payload_len=255)
    with pytest.raises(ValueError):
        make_device(payload_len=256)


# --- gateway channel and dedup -------------------------------------------------------

def test_one_frame_one_ingestion():
    mempool = []
    proxy, _ = make_proxy(mempool)
    gw = Gateway(generate_keypair(b"gw-0"), GatewayRole.FULL_NODE, proxy)
    device = make_device()
    frame = device.tick(0)
    assert gw.receive(frame, device) is not None
    assert len(mempool) == 1


def test_replayed_frame_dropped():
    mempool = []
    proxy, _ = make_proxy(mempool)
    gw = Gateway(generate_keypair(b"gw-0"), GatewayRole.FULL_NODE, proxy)
    device = make_device()
    frame = device.tick(0)
    gw.receive(frame, device)
    assert gw.receive(frame, device) is None
    assert gw.duplicates_dropped == 1
    assert len(mempool) == 1


def test_conservation_hundred_devices_ten_frames():
    mempool = []
    proxy, _ = make_proxy(mempool)
    gw = Gateway(generate_keypair(b"gw-0"), GatewayRole.FULL_NODE, proxy)
    devices = [make_device(label=b"dev-%d" % i, period=10)
               for i in range(100)]
    for t in range(0, 100_000, 10_000):
        for device in devices:
            frame = device.tick(t)
            if frame:
                gw.receive(frame, device)
    assert gw.received == 1000
    assert proxy.ingested == 1000
    assert len(mempool) == 1000


def test_overlapping_frames_queue_on_the_channel():
    proxy, _ = make_proxy([])
    gw = Gateway(generate_keypair(b"gw-0"), GatewayRole.FULL_NODE, proxy)
    # two sigfox frames emitted together: 0.96s airtime each, no overlap
    f1 = UplinkFrame(b"\x01" * 20, 0, b"x" * 12, 0, 0.96)
    f2 = UplinkFrame(b"\x02" * 20, 0, b"y" * 12, 0, 0.96)
    a1 = gw.schedule_arrival(f1)
    a2 = gw.schedule_arrival(f2)
    assert a1 == 960
    assert a2 == 1920  # transmission starts only after the channel frees


# --- smart proxy ------------------------------------------------------------------------

def test_payload_stored_before_transaction_enqueued():
    order = []
    store = StoreCluster(["n0", "n1", "n2"], 3)
    original_put = store.put

    def tracking_put(payload):
        order.append("store")
        return original_put(payload)

    store.put = tracking_put
    mempool = []
    proxy = SmartProxy(generate_keypair(b"gw-0"), store, NonceCounter(),
                       lambda tx: order.append("enqueue") or mempool.append(tx),
                       per_tx_gas=21_000)
    proxy.ingest(make_device(), b"payload")
    assert order == ["store", "enqueue"]


def test_ingest_returns_traceable_tx_id():
    mempool = []
    proxy, _ = make_proxy(mempool)
    tx_id = proxy.ingest(make_device(), b"payload")
    assert tx_id == mempool[0].tx_id


def test_store_outage_buffers_and_retries():
    mempool = []
    store = StoreCluster(["n0", "n1", "n2"], 3)
    proxy = SmartProxy(generate_keypair(b"gw-0"), store, NonceCounter(),
                       mempool.append, per_tx_gas=21_000)
    store.fail_node("n0")
    assert proxy.ingest(make_device(), b"payload") is None
    assert len(proxy.buffer) == 1
    assert mempool == []
    assert proxy.retry_tick() == 0  # still down
    store.recover_node("n0")
    assert proxy.retry_tick() == 1
    assert len(mempool) == 1
    assert len(proxy.buffer) == 0


def test_retry_buffer_drops_oldest_when_full():
    store = StoreCluster(["n0", "n1", "n2"], 3)
    proxy = SmartProxy(generate_keypair(b"gw-0"), store, NonceCounter(),
                       lambda tx: None, per_tx_gas=21_000, retry_buffer=8)
    store.fail_node("n0")
    device = make_device()
    for i in range(12):
        proxy.ingest(device, b"payload-%d" % i)
    assert len(proxy.buffer) == 8
    assert proxy.buffer_drops == 4


def test_transaction_sender_depends_on_client_mode():
    mempool = []
    proxy, _ = make_proxy(mempool)
    plain = make_device(label=b"plain", mode=ClientMode.PLAIN_SENSOR)
    trusting = make_device(label=b"trusting", mode=ClientMode.SERVER_TRUSTING)
    thin = make_device(label=b"thin", power=Power.ALWAYS_ON,
                       mode=ClientMode.THIN_CLIENT)
    proxy.ingest(plain, b"p1")
    proxy.ingest(trusting, b"p2")
    proxy.ingest(thin, b"p3")
    senders = [tx.sender for tx in mempool]
    assert senders[0] == proxy.gateway_keypair.address
    assert senders[1] == trusting.address
    assert senders[2] == thin.address
    assert all(tx.verify() for tx in mempool)


# --- server-trusting flow ------------------------------------------------------------------

def chain_accepting(txs):
    chain = ChainState(make_genesis(), AcceptAllEngine(), 4_712_388)
    header = BlockHeader(chain.genesis.hash, compute_tx_root(tuple(txs)), 10,
                         1, b"test")
    return chain, Block(header, tuple(txs))


def test_signed_flow_accepted_by_full_node():
    device = make_device(label=b"st", mode=ClientMode.SERVER_TRUSTING)
    mempool = []
    tx = server_trusting_submit(NonceCounter(), device, SET_DEVICE_DATA,
                                (device.address, b"\x11" * 32), 21_000,
                                mempool.append)
    assert mempool == [tx]
    chain, block = chain_accepting(mempool)
    assert chain.append_block(block).height == 1


def test_server_forged_signature_never_validates():
    device = make_device(label=b"st2", mode=ClientMode.SERVER_TRUSTING)
    forged = Transaction(device.keypair.pubkey, 0, SET_DEVICE_DATA,
                         (device.address, b"\x11" * 32), 21_000,
                         b"\x5a" * 64)
    assert not forged.verify()
    chain, block = chain_accepting([forged])
    with pytest.raises(BadSignature):
        chain.append_block(block)


def test_client_refusal_leaves_mempool_unchanged():
    device = make_device(label=b"st3", mode=ClientMode.SERVER_TRUSTING,
                         refuse=True)
    mempool = []
    with pytest.raises(ClientRefused):
        server_trusting_submit(NonceCounter(), device, SET_DEVICE_DATA,
                               (device.address, b"\x11" * 32), 21_000,
                               mempool.append)
    assert mempool == []


# --- thin client -------------------------------------------------------------------------------

def committed_chain(n_txs=4):
    kp = generate_keypair(b"committer")
    txs = tuple(
        make_transaction(kp, nonce, SET_DEVICE_DATA,
                         (b"\xaa" * 20, bytes([nonce]) * 32), 21_000)
        for nonce in range(n_txs))
    chain = ChainState(make_genesis(), AcceptAllEngine(), 4_712_388)
    header = BlockHeader(chain.genesis.hash, compute_tx_root(txs), 10, 1,
                         b"test")
    chain.append_block(Block(header, txs))
    return chain, txs


def test_committed_tx_confirmed_via_proof():
    chain, txs = committed_chain()
    view = FullNodeView(chain)
    client = ThinClient()
    client.sync_from(view)
    for tx in txs:
        assert client.confirm(tx.tx_id, view)


def test_uncommitted_tx_unconfirmed():
    chain, _ = committed_chain()
    client = ThinClient()
    client.sync_from(FullNodeView(chain))
    assert not client.confirm(b"\x00" * 32, FullNodeView(chain))


def test_doctored_proof_rejected():
    chain, txs = committed_chain()
    view = FullNodeView(chain)
    client = ThinClient()
    client.sync_from(view)

    class EvilView(FullNodeView):
        def prove_inclusion(self, tx_id):
            header, tx, proof = super().prove_inclusion(tx_id)
            sibling, side = proof.path[0]
            doctored = ((sibling[:-1] + bytes([sibling[-1] ^ 1]), side),
                        *proof.path[1:])
            return header, tx, MerkleProof(proof.leaf_index, doctored)

    assert not client.confirm(txs[0].tx_id, EvilView(chain))


def test_client_holds_headers_only():
    chain, _ = committed_chain()
    client = ThinClient()
    client.sync_from(FullNodeView(chain))
    audit = client.state_audit()
    assert audit["headers"] == 2  # genesis plus one block
    assert audit["object_types"] == ["BlockHeader"]


def test_header_chain_linkage_enforced():
    chain, _ = committed_chain()
    headers = FullNodeView(chain).canonical_headers()
    client = ThinClient()
    client.accept_header(headers[0])
    wrong = BlockHeader(b"\x13" * 32, headers[1].tx_root,
                        headers[1].timestamp, 1, headers[1].seal)
    with pytest.raises(ValueError):
        client.accept_header(wrong)
    client.accept_header(headers[1])
