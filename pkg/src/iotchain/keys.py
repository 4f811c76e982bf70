"""Ed25519 identities: seeded key generation, addresses, sign/verify.

All key material is derived from caller-supplied seed bytes so a scenario
seed fully determines every identity in a run. Addresses are the first 20
bytes of the SHA-256 of the public key, giving a compact opaque identifier
that collides only with negligible probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from ._kernels import sha256

ADDRESS_LEN = 20
PUBKEY_LEN = 32
SIGNATURE_LEN = 64

HASH_FUNCTION = "sha256"
SIGNATURE_SCHEME = "ed25519"


def derive_address(pubkey: bytes) -> bytes:
    if len(pubkey) != PUBKEY_LEN:
        raise ValueError("public key must be 32 bytes")
    return sha256(pubkey)[:ADDRESS_LEN]


@dataclass
class KeyPair:
    """A signing identity. ``address`` is derived, never assigned."""

    _private: Ed25519PrivateKey
    pubkey: bytes
    address: bytes = field(init=False)

    def __post_init__(self) -> None:
        self.address = derive_address(self.pubkey)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def generate_keypair(seed_material: bytes) -> KeyPair:
    """Derive an Ed25519 keypair deterministically from arbitrary bytes."""
    private = Ed25519PrivateKey.from_private_bytes(sha256(seed_material))
    pub = private.public_key().public_bytes_raw()
    return KeyPair(private, pub)


def verify_signature(pubkey: bytes, signature: bytes, message: bytes) -> bool:
    if len(pubkey) != PUBKEY_LEN or len(signature) != SIGNATURE_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(pubkey).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False
