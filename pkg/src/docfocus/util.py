"""Small shared helpers: stable seed derivation and canonical JSON."""

from __future__ import annotations

import hashlib
import json


def derive_seed(seed: int, tag: str | int) -> int:
    """Stable 63-bit sub-seed for a named stream; independent of PYTHONHASHSEED."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def canonical_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, fixed separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stable_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
