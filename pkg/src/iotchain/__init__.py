"""Deterministic simulator of a blockchain-backed LPWAN data pipeline.

End devices uplink payloads to gateway smart proxies, which store each
payload in a replicated content-addressed chunk store and anchor the
returned handle in a gas-metered on-chain device registry, sealed by a
pluggable consensus engine (proof-of-work, stake-weighted selection or
quorum-voting BFT). Everything is driven by one seeded discrete-event
loop, so runs are reproducible byte for byte.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
