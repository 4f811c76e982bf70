import json
from pathlib import Path

import pytest

from iotchain.chain import (
    BadSignature,
    BadTimestamp,
    BadTxRoot,
    Block,
    BlockHeader,
    ChainState,
    EMPTY_TX_ROOT,
    FinalityBroken,
    GasLimitExceeded,
    NonceReplayed,
    Transaction,
    UnknownParent,
    block_from_json_line,
    block_to_json_line,
    compute_tx_root,
    hash_header,
    make_genesis,
    make_transaction,
    select_head,
)
from iotchain.keys import generate_keypair
from iotchain.merkle import merkle_root

GOLDEN = Path(__file__).parent / "data" / "golden_genesis.json"


class AcceptAllEngine:
    """Chain mechanics in isolation: every seal passes."""

    name = "null"
    final = False

    def verify_seal(self, chain, block, parent):
        pass

    def on_accept(self, chain, record):
        pass


def new_chain(gas_limit=4_712_388):
    return ChainState(make_genesis(), AcceptAllEngine(), gas_limit)


def make_block(parent, txs=(), timestamp=None, seal=b"test"):
    ts = timestamp if timestamp is not None else parent.header.timestamp + 10
    header = BlockHeader(parent.hash, compute_tx_root(tuple(txs)), ts,
                         parent.height + 1, seal)
    return Block(header, tuple(txs))


# --- header hashing ------------------------------------------------------

def test_identical_headers_hash_identically():
    h = make_genesis().header
    assert hash_header(h) == hash_header(h)


def test_timestamp_changes_digest():
    a = BlockHeader(b"\x00" * 32, EMPTY_TX_ROOT, 100, 1, b"s")
    b = BlockHeader(b"\x00" * 32, EMPTY_TX_ROOT, 101, 1, b"s")
    assert hash_header(a) != hash_header(b)


def test_every_field_is_hashed():
    base = BlockHeader(b"\x00" * 32, EMPTY_TX_ROOT, 100, 1, b"s")
    variants = [
        BlockHeader(b"\x01" + b"\x00" * 31, base.tx_root, 100, 1, b"s"),
        BlockHeader(base.parent_hash, b"\x02" * 32, 100, 1, b"s"),
        BlockHeader(base.parent_hash, base.tx_root, 999, 1, b"s"),
        BlockHeader(base.parent_hash, base.tx_root, 100, 2, b"s"),
        BlockHeader(base.parent_hash, base.tx_root, 100, 1, b"t"),
    ]
    digests = {hash_header(h) for h in [base] + variants}
    assert len(digests) == len(variants) + 1


def test_genesis_digest_matches_golden_file():
    # frozen once from this build's reference encoder; regenerate with
    # scripts/regen_golden.py if the encoding ever changes deliberately
    golden = json.loads(GOLDEN.read_text())
    assert hash_header(make_genesis().header).hex() == golden["genesis_hash"]


# --- transactions --------------------------------------------------------

def test_transaction_signature_round_trip(tx_factory):
    tx = tx_factory()
    assert tx.verify()


def test_transaction_field_mutation_breaks_signature(tx_factory):
    tx = tx_factory()
    tampered = Transaction(tx.sender_pubkey, tx.nonce + 1, tx.function,
                           tx.args, tx.gas_used, tx.signature)
    assert not tampered.verify()


def test_tx_array_round_trip(tx_factory):
    tx = tx_factory()
    line = block_to_json_line(Block(make_genesis().header, (tx,)))
    block, _ = block_from_json_line(line)
    assert block.transactions[0] == tx


# --- append_block --------------------------------------------------------

def test_valid_block_advances_head(tx_factory):
    chain = new_chain()
    block = make_block(chain.genesis, [tx_factory()])
    rec = chain.append_block(block)
    assert chain.head is rec
    assert rec.height == 1


def test_unknown_parent_rejected(tx_factory):
    chain = new_chain()
    orphan = Block(
        BlockHeader(b"\x99" * 32, EMPTY_TX_ROOT, 10, 1, b"test"), ())
    with pytest.raises(UnknownParent):
        chain.append_block(orphan)
    assert chain.head is chain.genesis


def test_tampered_payload_after_sealing_rejected(tx_factory):
    chain = new_chain()
    tx = tx_factory()
    block = make_block(chain.genesis, [tx])
    evil = Transaction(tx.sender_pubkey, tx.nonce, tx.function,
                       (tx.args[0], b"\xee" * 32), tx.gas_used, tx.signature)
    tampered = Block(block.header, (evil,))
    with pytest.raises(BadTxRoot):
        chain.append_block(tampered)


def test_forged_signature_rejected():
    kp = generate_keypair(b"victim")
    forged = Transaction(kp.pubkey, 0, "set_device_data",
                         (b"\xaa" * 20, b"\xbb" * 32), 21_000, b"\x00" * 64)
    chain = new_chain()
    with pytest.raises(BadSignature):
        chain.append_block(make_block(chain.genesis, [forged]))


def test_gas_limit_enforced(tx_factory):
    chain = new_chain(gas_limit=40_000)
    txs = [tx_factory(label=b"a"), tx_factory(label=b"b")]  # 42k total
    with pytest.raises(GasLimitExceeded):
        chain.append_block(make_block(chain.genesis, txs))


def test_nonce_replay_within_block_rejected(tx_factory):
    chain = new_chain()
    tx = tx_factory(nonce=0)
    with pytest.raises(NonceReplayed):
        chain.append_block(make_block(chain.genesis, [tx, tx]))


def test_nonce_replay_across_blocks_rejected(tx_factory):
    chain = new_chain()
    tx = tx_factory(nonce=0)
    rec = chain.append_block(make_block(chain.genesis, [tx]))
    with pytest.raises(NonceReplayed):
        chain.append_block(make_block(rec, [tx]))


def test_timestamp_must_increase(tx_factory):
    chain = new_chain()
    rec = chain.append_block(make_block(chain.genesis, timestamp=10))
    with pytest.raises(BadTimestamp):
        chain.append_block(make_block(rec, timestamp=10))


def test_rejection_leaves_state_untouched(tx_factory):
    chain = new_chain()
    before = (chain.head.hash, len(chain.records))
    with pytest.raises(UnknownParent):
        chain.append_block(Block(
            BlockHeader(b"\x77" * 32, EMPTY_TX_ROOT, 5, 1, b"test"), ()))
    assert (chain.head.hash, len(chain.records)) == before


# --- fork choice ----------------------------------------------------------

def test_single_tip_selected():
    chain = new_chain()
    assert select_head([chain.genesis]) is chain.genesis


def test_longest_chain_wins():
    chain = new_chain()
    rec = chain.genesis
    for height in range(1, 8):
        rec = chain.append_block(make_block(rec, timestamp=height * 10))
    short = chain.append_block(
        make_block(chain.genesis, timestamp=5, seal=b"fork"))
    assert chain.head.height == 7
    assert short.height == 1
    assert len(chain.tips) == 2


def test_equal_heights_tie_broken_by_lowest_digest():
    chain = new_chain()
    a = chain.append_block(make_block(chain.genesis, timestamp=10, seal=b"a"))
    b = chain.append_block(make_block(chain.genesis, timestamp=11, seal=b"b"))
    expected = a if a.hash < b.hash else b
    assert chain.head is expected


def test_finalizing_engine_refuses_two_tips():
    chain = new_chain()
    a = chain.append_block(make_block(chain.genesis, timestamp=10, seal=b"a"))
    b = chain.append_block(make_block(chain.genesis, timestamp=11, seal=b"b"))
    with pytest.raises(FinalityBroken):
        select_head([a, b], final=True)


# --- chain-wide invariants -------------------------------------------------

def test_chain_integrity_over_100_blocks(tx_factory):
    chain = new_chain()
    rec = chain.genesis
    for height in range(1, 101):
        txs = [tx_factory()] if height % 3 == 0 else []
        rec = chain.append_block(make_block(rec, txs, timestamp=height * 10))
    canonical = chain.canonical()
    assert [r.height for r in canonical] == list(range(101))
    for parent, child in zip(canonical, canonical[1:]):
        assert child.header.parent_hash == hash_header(parent.header)


def test_tamper_evidence_exhaustive_bytes(tx_factory):
    # any byte mutation in any transaction must change the Merkle root
    txs = [tx_factory(label=b"t%d" % i) for i in range(8)]
    encoded = [tx.encoded for tx in txs]
    root = merkle_root(encoded)
    for i, blob in enumerate(encoded):
        for pos in range(len(blob)):
            mutated = list(encoded)
            mutated[i] = blob[:pos] + bytes([blob[pos] ^ 0xFF]) + blob[pos + 1:]
            assert merkle_root(mutated) != root, (i, pos)


@pytest.mark.parametrize("mutate", [
    lambda tx: Transaction(tx.sender_pubkey, tx.nonce + 1, tx.function,
                           tx.args, tx.gas_used, tx.signature),
    lambda tx: Transaction(tx.sender_pubkey, tx.nonce, "other_call",
                           tx.args, tx.gas_used, tx.signature),
    lambda tx: Transaction(tx.sender_pubkey, tx.nonce, tx.function,
                           (tx.args[0], b"\x00" * 32), tx.gas_used, tx.signature),
    lambda tx: Transaction(tx.sender_pubkey, tx.nonce, tx.function,
                           tx.args, tx.gas_used + 1, tx.signature),
])
def test_revalidation_rejects_tampered_blocks(tx_factory, mutate):
    chain = new_chain()
    tx = tx_factory()
    block = make_block(chain.genesis, [tx])
    chain.append_block(block)
    fresh = new_chain()
    with pytest.raises((BadTxRoot, BadSignature)):
        fresh.append_block(Block(block.header, (mutate(tx),)))


# --- serialization ---------------------------------------------------------

def test_block_json_line_round_trip(tx_factory):
    chain = new_chain()
    block = make_block(chain.genesis, [tx_factory(), tx_factory(label=b"x")])
    line = block_to_json_line(block)
    parsed, claimed_hash = block_from_json_line(line)
    assert parsed == block
    assert claimed_hash == hash_header(block.header)
