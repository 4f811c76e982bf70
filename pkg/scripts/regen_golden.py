#!/usr/bin/env python3
"""Regenerate frozen golden values from the current reference encoder.

Run only when an encoding change is intentional; commit the diff together
with the change that caused it.
"""

import json
from pathlib import Path

from iotchain.chain import hash_header, make_genesis
from iotchain.keys import HASH_FUNCTION

OUT = Path(__file__).parent.parent / "tests" / "data" / "golden_genesis.json"


def main():
    OUT.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "hash_function": HASH_FUNCTION,
        "genesis_hash": hash_header(make_genesis().header).hex(),
    }
    OUT.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {OUT}")
    print(json.dumps(payload, indent=2))


if __name__ == "__main__":
    main()
