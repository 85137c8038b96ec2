"""Position map: block id -> (leaf, stamp).

Baseline server-hosted table. Entries are 8 bytes big-endian (stamp in the
high 32 bits, leaf in the low 32) grouped into super-blocks of 64 entries,
each super-block encrypted separately. A lookup reads exactly one
super-block; a dummy lookup reads a random one, so both look the same.

The stamp lets tree reads tell the current copy of a block from stale ones
left behind in buckets.
"""

from __future__ import annotations

import random
from typing import Iterable, List, Optional, Sequence, Tuple

from .core import OramError, is_real
from .crypto import CipherSuite

REGION = "posmap"
PER_SUPER = 64


def pack_entry(leaf: int, stamp: int) -> bytes:
    return ((stamp << 32) | leaf).to_bytes(8, "big")


def unpack_entry(raw: bytes) -> Tuple[int, int]:
    v = int.from_bytes(raw, "big")
    return v & 0xFFFFFFFF, v >> 32


class PositionMap:
    def __init__(self, N: int, c: int, suite: CipherSuite):
        self.N = N
        self.c = c
        self.suite = suite
        self.per = min(PER_SUPER, N)
        self.nsuper = N // self.per
        self.env = suite.envelope_size(8 * self.per)

    @property
    def region_size(self) -> int:
        return self.nsuper * self.env

    def encode(self, entries: Sequence[Tuple[int, int]]) -> bytes:
        out = []
        for s in range(self.nsuper):
            chunk = entries[s * self.per:(s + 1) * self.per]
            out.append(self.suite.encrypt(b"".join(pack_entry(l, st) for l, st in chunk)))
        return b"".join(out)

    def decode(self, raw: bytes) -> List[Tuple[int, int]]:
        entries = []
        for s in range(self.nsuper):
            plain = self.suite.decrypt(raw[s * self.env:(s + 1) * self.env])
            entries += [unpack_entry(plain[8 * j:8 * j + 8]) for j in range(self.per)]
        return entries

    def _super(self, tr, s: int) -> bytes:
        return self.suite.decrypt(tr.region_read(REGION, s * self.env, self.env))

    def pm_read(self, tr, block_id: int) -> Tuple[int, int]:
        if not is_real(block_id, self.N):
            raise OramError(f"block {block_id} is not mapped")
        s, j = divmod(block_id, self.per)
        return unpack_entry(self._super(tr, s)[8 * j:8 * j + 8])

    def pm_read_dummy(self, tr, s: int) -> None:
        """Read super-block ``s`` (drawn by the caller on every query, so the
        random stream does not depend on whether the query is a dummy)."""
        self._super(tr, s % self.nsuper)
        return None

    def pm_read_all(self, tr) -> List[Tuple[int, int]]:
        return self.decode(tr.region_read(REGION, 0, self.region_size))

    def pm_update_batch(self, tr, assignments: Iterable[Tuple[int, int, int]]) -> int:
        """Apply (id, leaf, stamp) assignments; the batch is padded with fake
        entries to c. The whole table is read and rewritten, so the access
        shape does not depend on the batch. Returns the number of fakes."""
        batch = list(assignments)
        if len(batch) > self.c:
            raise OramError("position map batch larger than one round")
        fakes = self.c - len(batch)
        entries = self.pm_read_all(tr)
        for bid, leaf, stamp in batch:
            if not is_real(bid, self.N):
                raise OramError(f"block {bid} is not mapped")
            entries[bid] = (leaf, stamp)
        tr.region_write(REGION, 0, self.encode(entries))
        return fakes
