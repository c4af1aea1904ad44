"""Counter-based random streams keyed by (seed, names...).

Each stream is a Philox generator whose 128-bit key is a SHA-256 digest of
the key parts, so a stream never depends on how many draws other streams
made or on which worker runs it.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def stream_key(global_seed: int, *parts) -> int:
    payload = json.dumps([int(global_seed), *[str(p) for p in parts]], separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(payload.encode("utf-8")).digest()[:16], "little")


def stream(global_seed: int, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(global_seed, *parts)))


def digest(obj) -> str:
    """Stable SHA-256 of a JSON-serialisable object."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
