"""Hash kernel backend selection.

The hot loops (SHA-256, Merkle folds, proof-of-work nonce scans) have two
implementations: a compiled Cython extension and a pure-Python fallback.
The extension is used when it imported cleanly; set IOTCHAIN_PURE_PYTHON=1
to force the fallback. Both backends are bit-identical by contract and the
test suite enforces it.
"""

import os

from . import _pykernels

if os.environ.get("IOTCHAIN_PURE_PYTHON") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND: str = _impl.BACKEND
sha256 = _impl.sha256
merkle_root = _impl.merkle_root
pow_search = _impl.pow_search

__all__ = ["BACKEND", "sha256", "merkle_root", "pow_search"]
