"""Backend equivalence: whichever kernel was selected at import must match
the pure-Python reference bit for bit."""

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotchain import _kernels
from iotchain._kernels import _pykernels

digests = st.binary(min_size=32, max_size=32)


def test_backend_identifies_itself():
    assert _kernels.BACKEND in ("c", "python")


@given(st.binary(max_size=200))
def test_sha256_matches_hashlib(data):
    assert _kernels.sha256(data) == hashlib.sha256(data).digest()


@given(st.lists(digests, min_size=1, max_size=40))
def test_merkle_root_backends_agree(leaves):
    assert _kernels.merkle_root(leaves) == _pykernels.merkle_root(leaves)


def test_merkle_root_rejects_empty():
    with pytest.raises(ValueError):
        _kernels.merkle_root([])
    with pytest.raises(ValueError):
        _pykernels.merkle_root([])


@settings(deadline=None)
@given(st.binary(max_size=64), st.integers(min_value=0, max_value=2**64 - 1),
       st.integers(min_value=246, max_value=255))
def test_pow_search_backends_agree(prefix, start, bits):
    threshold = (1 << bits).to_bytes(32, "big")
    got_c = _kernels.pow_search(prefix, threshold, start, 2000)
    got_py = _pykernels.pow_search(prefix, threshold, start, 2000)
    assert got_c == got_py


def test_pow_search_finds_verifiable_nonce():
    threshold = (1 << 250).to_bytes(32, "big")
    nonce, attempts = _kernels.pow_search(b"hdr", threshold, 0, 10_000)
    assert nonce is not None
    assert 1 <= attempts <= 10_000
    digest = hashlib.sha256(b"hdr" + nonce.to_bytes(8, "big")).digest()
    assert digest < threshold


def test_pow_search_exhaustion():
    # threshold of 1: only the all-zero digest passes, unreachable here
    threshold = (1).to_bytes(32, "big")
    nonce, attempts = _kernels.pow_search(b"hdr", threshold, 0, 50)
    assert nonce is None
    assert attempts == 50


def test_pow_search_nonce_wraps_at_u64():
    threshold = b"\xff" * 32  # everything passes immediately
    nonce, attempts = _kernels.pow_search(b"", threshold, 2**64 - 1, 10)
    assert (nonce, attempts) == (2**64 - 1, 1)


def test_pow_search_rejects_bad_arguments():
    with pytest.raises(ValueError):
        _kernels.pow_search(b"", b"\x00" * 31, 0, 10)
    with pytest.raises(ValueError):
        _kernels.pow_search(b"", b"\x00" * 32, 0, 0)
