"""Deterministic counter-based RNG streams.

Streams are keyed by (seed, replica id, purpose tag) through SHA-256 into a
128-bit Philox key, so distinct replicas and purposes get statistically
independent generators and the same triple always reproduces the same
stream.  The mapping is recorded in run manifests.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed, replica_id, purpose):
    """128-bit Philox key derived from the stream triple."""
    text = f"{int(seed)}:{int(replica_id)}:{purpose}".encode()
    digest = hashlib.sha256(text).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def stream_for(seed, replica_id, purpose):
    """Independent deterministic generator for one (seed, replica, purpose)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica_id, purpose)))


def stream_manifest_entry(seed, replica_id, purpose):
    key = stream_key(seed, replica_id, purpose)
    return {
        "seed": int(seed),
        "replica": int(replica_id),
        "purpose": purpose,
        "key": "".join(f"{int(k):016x}" for k in key),
    }
