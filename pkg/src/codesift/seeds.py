"""Named substreams derived from one top-level run seed.

Every component that needs randomness derives its own stream here, keyed by
a path of names (e.g. ``("select", example_id)``), so no component can
perturb another's stream and whole runs replay exactly from a single seed.
Derivation goes through SHA-256 rather than Python's hash() so streams are
stable across processes and platforms.
"""

from __future__ import annotations

import hashlib
import random


def substream_seed(seed: int, *names: str) -> int:
    """Derive a 63-bit child seed from a parent seed and a name path."""
    key = f"{seed}/" + "/".join(names)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def substream_rng(seed: int, *names: str) -> random.Random:
    """A ``random.Random`` seeded from the named substream."""
    return random.Random(substream_seed(seed, *names))
