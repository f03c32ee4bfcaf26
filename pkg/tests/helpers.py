"""Shared fixture plumbing (not oracles): seeding fragments onto a cluster."""

import hashlib

from gdfarm.storage import TokenBucket


def payload(lfn: str, index: int, size: int) -> bytes:
    return hashlib.shake_128(f"{lfn}:{index}".encode()).digest(size)


def seed_file(cluster, lfn: str, placement: list[str], size: int):
    """Store fragment i of ``lfn`` on ``placement[i]`` and register the file.

    The write limiter is bypassed so set-up time does not count against
    rate-limited scenarios.
    """
    metas = []
    for i, node in enumerate(placement):
        store = cluster.store(node)
        bucket, store.write_bucket = store.write_bucket, TokenBucket(0)
        try:
            metas.append(store.put_fragment(lfn, i, payload(lfn, i, size)))
        finally:
            store.write_bucket = bucket
    return cluster.catalog.register_file(lfn, metas)
