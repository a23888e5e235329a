"""Canonical JSON helpers shared by the versioned document formats.

Floats are emitted through Python's shortest round-trip repr, so every
serialized number reloads to the exact same double. Digests are computed
over the canonical (sorted-key, no-whitespace) encoding.
"""

from __future__ import annotations

import hashlib
import json


def canonical_dumps(obj) -> str:
    """Stable, whitespace-free encoding used for hashing and checksums."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def pretty_dumps(obj) -> str:
    """Deterministic human-readable encoding used for files on disk."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def digest_of(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()


def digest_of_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
