import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iotchain._kernels import sha256
from iotchain.store import (
    ChunkHandle,
    InsufficientReplicas,
    NotFound,
    StoreCluster,
    Unavailable,
    UnknownNode,
    fsck_chunk_dir,
)


def cluster(nodes=6, r=3):
    return StoreCluster([f"node-{i}" for i in range(nodes)],
                        replication_factor=r)


# --- content addressing ------------------------------------------------------

def test_put_get_round_trip():
    c = cluster()
    payload = b"sensor reading 42"
    handle = c.put(payload)
    assert handle.digest == sha256(payload)
    assert c.get(handle) == payload


def test_put_is_idempotent():
    c = cluster()
    h1 = c.put(b"same bytes")
    h2 = c.put(b"same bytes")
    assert h1 == h2
    copies = sum(1 for node in c.data.values() if h1 in node)
    assert copies == c.replication_factor


def test_empty_payload_is_storable():
    c = cluster()
    handle = c.put(b"")
    assert c.get(handle) == b""
    assert handle.digest == sha256(b"")


def test_thousand_random_payloads_distinct_handles():
    c = cluster(nodes=8)
    handles = {c.put(b"payload-%d" % i) for i in range(1000)}
    assert len(handles) == 1000


def test_unknown_handle_not_found():
    c = cluster()
    with pytest.raises(NotFound):
        c.get(ChunkHandle(b"\x42" * 32))


@given(st.binary(max_size=255))
def test_content_addressing_property(payload):
    c = cluster(nodes=4, r=2)
    handle = c.put(payload)
    assert sha256(c.get(handle)) == handle.digest


# --- placement ----------------------------------------------------------------

def test_placement_lists_exactly_r_distinct_nodes():
    c = cluster()
    handle = c.put(b"x")
    nodes = c.placement[handle]
    assert len(nodes) == 3
    assert len(set(nodes)) == 3


def test_placement_is_deterministic_across_rebuilds():
    a, b = cluster(), cluster()
    payloads = [b"chunk-%d" % i for i in range(50)]
    for p in payloads:
        assert a.put(p) == b.put(p)
    assert a.placement == b.placement


def test_placement_spreads_load():
    c = cluster(nodes=6)
    for i in range(300):
        c.put(b"spread-%d" % i)
    per_node = [len(chunks) for chunks in c.data.values()]
    assert min(per_node) > 0  # rendezvous hashing uses every node


# --- failure injection -----------------------------------------------------------

def test_fail_then_recover_restores_reads():
    c = cluster()
    handle = c.put(b"payload")
    for node in c.placement[handle]:
        c.fail_node(node)
    with pytest.raises(Unavailable):
        c.get(handle)
    c.recover_node(c.placement[handle][0])
    assert c.get(handle) == b"payload"


def test_survives_any_two_failures_with_r3():
    c = cluster(nodes=6, r=3)
    handles = [c.put(b"chunk-%d" % i) for i in range(10)]
    for down in itertools.combinations(c.up, 2):
        for node in down:
            c.fail_node(node)
        for handle in handles:
            assert c.get(handle) is not None
        for node in down:
            c.recover_node(node)


def test_unavailable_only_when_all_replicas_down():
    c = cluster(nodes=6, r=3)
    handle = c.put(b"chunk")
    replicas = c.placement[handle]
    for partial in itertools.combinations(replicas, 2):
        for node in partial:
            c.fail_node(node)
        assert c.get(handle) == b"chunk"
        for node in partial:
            c.recover_node(node)
    for node in replicas:
        c.fail_node(node)
    with pytest.raises(Unavailable):
        c.get(handle)


def test_put_requires_r_up_nodes():
    c = cluster(nodes=3, r=3)
    c.fail_node("node-0")
    with pytest.raises(InsufficientReplicas):
        c.put(b"too few nodes")


def test_unknown_node_rejected():
    c = cluster()
    with pytest.raises(UnknownNode):
        c.fail_node("nope")
    with pytest.raises(UnknownNode):
        c.recover_node("nope")


# --- integrity audit ----------------------------------------------------------------

def test_integrity_after_put():
    c = cluster()
    handle = c.put(b"clean")
    assert c.verify_integrity(handle)


def test_corruption_detected_and_repaired():
    c = cluster()
    handle = c.put(b"original")
    victim = c.placement[handle][0]
    c.corrupt_replica(victim, handle, b"garbage")
    assert not c.verify_integrity(handle)
    assert c.get(handle) == b"original"  # reader skips the bad replica
    assert c.repair(handle) == 1
    assert c.verify_integrity(handle)


def test_integrity_ignores_down_replicas():
    c = cluster()
    handle = c.put(b"original")
    victim = c.placement[handle][0]
    c.corrupt_replica(victim, handle, b"garbage")
    c.fail_node(victim)  # unreadable, so not judged
    assert c.verify_integrity(handle)


def test_integrity_of_unknown_handle():
    with pytest.raises(NotFound):
        cluster().verify_integrity(ChunkHandle(b"\x01" * 32))


# --- on-disk persistence ---------------------------------------------------------------

def test_dump_and_fsck(tmp_path):
    c = cluster()
    for i in range(5):
        c.put(b"disk-%d" % i)
    count = c.dump_chunks(tmp_path / "chunks")
    assert count == 5
    assert fsck_chunk_dir(tmp_path / "chunks") == []


def test_fsck_flags_corrupt_and_misnamed_files(tmp_path):
    c = cluster()
    handle = c.put(b"disk")
    c.dump_chunks(tmp_path)
    victim = tmp_path / handle.hex
    victim.write_bytes(b"flipped")
    (tmp_path / "not-hex.tmp").write_bytes(b"junk")
    bad = fsck_chunk_dir(tmp_path)
    assert handle.hex in bad
    assert "not-hex.tmp" in bad
