import pytest

from iotchain.chain import Transaction, make_transaction
from iotchain.keys import generate_keypair
from iotchain.registry import SET_DEVICE_DATA


@pytest.fixture
def keypair():
    return generate_keypair(b"test-keypair-0")


@pytest.fixture
def tx_factory():
    """Signed set_device_data transactions with auto-incrementing nonces."""
    counters = {}

    def make(label=b"sender-0", nonce=None, device=b"\xaa" * 20,
             filehash=b"\xbb" * 32, gas_used=21_000) -> Transaction:
        kp = generate_keypair(b"tx-factory-" + label)
        if nonce is None:
            nonce = counters.get(label, 0)
            counters[label] = nonce + 1
        return make_transaction(kp, nonce, SET_DEVICE_DATA,
                                (device, filehash), gas_used)

    return make
