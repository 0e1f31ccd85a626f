"""Deterministic seed derivation for replication streams.

Seeds are derived by hashing the (master seed, condition, replication,
stream tag) tuple, so every replication gets an independent stream that
is identical no matter how work is scheduled across workers.
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, condition_index: int, replication_index: int, stream_tag: str) -> int:
    """Collision-resistant 64-bit seed for one (condition, replication, stream)."""
    payload = f"{int(master_seed)}|{int(condition_index)}|{int(replication_index)}|{stream_tag}"
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
