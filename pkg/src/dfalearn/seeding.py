"""Deterministic seed derivation.

Every random draw in the project flows from a single root seed through
``derive_seed(root, tag, index)``.  The derivation hashes the triple with
SHA-256, so sub-seeds are stable across Python versions, platforms, and
library upgrades (unlike ``numpy.random.SeedSequence.spawn``, whose spawn
path depends on call order).
"""

import hashlib

__all__ = ["derive_seed"]


def derive_seed(root: int, tag: str, index: int = 0) -> int:
    """Derive a 63-bit sub-seed from (root seed, purpose tag, index)."""
    payload = f"{root}/{tag}/{index}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") >> 1
