"""The eviction engine.

One eviction runs per closed query round. Its life:

1. register: under the eviction lock take the next eviction counter ``ctr``
   (the path is ``reverse_lex_path(ctr)``), but only once every eviction
   with counter <= ctr - k has committed. At most k evictions are in flight
   and their paths only share the top ``h`` levels (the eviction subtree).
2. process, stage 1: read the path buckets below the subtree from the
   write-only tree. No lock.
3. process, stage 2 (processing lock): take temporary id ``t`` from the
   processing counter, read the previous eviction's leftover stash, the
   subtree buckets, bigentry log ``t-1`` and the position map; place blocks
   greedily; write subtree buckets to the write-only tree and to
   ``evict_cache/<t>/est``; write the leftovers as temporary stash ``t``.
4. process, stage 3: write the path buckets below the subtree. No lock.
5. commit (query lock, waiting for in-flight queries to drain): publish the
   tree writes of every processed eviction up to ``t`` into the data tree
   in temporary-id order, add stash ``t`` to the StashSet, retire bigentry
   log ``t-1`` and the round's query log.

Publishing in order matters when commits happen out of order: a later
eviction's subtree buckets can only be trusted together with the deeper
buckets the earlier evictions wrote.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .core import Block, InvariantBreach, is_real
from .datatree import (DATA_TREE, WO_TREE, decode_bucket, encode_bucket, evict_to_path, node_at,
                       reverse_lex_path)
from .logset import LogSet, drl, log_index, log_rm, log_slots, qlog
from .posmap import PositionMap
from .state import (EVICTION_LOCK, PROCESSING_LOCK, QUERY_LOCK, Ctx, Directory, read_directory,
                    write_directory)
from .stashset import StashSet, stash_index, stash_slots

LOG = "eviction_log"
CTR = "ctr"
PROC_CTR = "processing_ctr"

REGISTER, PROCESSED, COMMITTED, WATERMARK = 1, 2, 3, 4
ENTRY = struct.Struct(">BQQ8s")


def qdone(r: int) -> str:
    return f"qdone/{r}"


def cache_est(t: int) -> str:
    return f"evict_cache/{t}/est"


def cache_stash(t: int) -> str:
    return f"evict_cache/{t}/stash"


@dataclass
class LogView:
    """Decoded eviction log."""

    wm_ctr: int = 0          # every counter below this has committed
    wm_tid: int = 1          # every temporary id below this has been processed
    registered: Set[int] = field(default_factory=set)
    processed: Dict[int, int] = field(default_factory=dict)   # tempId -> ctr
    committed: Set[int] = field(default_factory=set)

    @classmethod
    def parse(cls, entries) -> "LogView":
        v = cls()
        for raw in entries:
            kind, a, b, _ = ENTRY.unpack(raw)
            if kind == WATERMARK:
                v.wm_ctr, v.wm_tid = a, b
            elif kind == REGISTER:
                v.registered.add(a)
            elif kind == PROCESSED:
                v.processed[b] = a
            elif kind == COMMITTED:
                v.committed.add(a)
        return v

    def min_uncommitted(self, next_ctr: int) -> int:
        pending = [c for c in self.registered if c >= self.wm_ctr and c not in self.committed]
        return min(pending) if pending else next_ctr

    def processed_below(self, t: int) -> bool:
        return all(u in self.processed for u in range(self.wm_tid, t))

    def compacted(self, next_ctr: int) -> List[bytes]:
        W = self.min_uncommitted(next_ctr)
        T = self.wm_tid
        while T in self.processed:
            T += 1
        out = [ENTRY.pack(WATERMARK, W, T, bytes(8))]
        out += [ENTRY.pack(REGISTER, c, 0, bytes(8)) for c in sorted(self.registered) if c >= W]
        out += [ENTRY.pack(PROCESSED, c, u, bytes(8)) for u, c in sorted(self.processed.items())
                if c >= W or u >= T]
        out += [ENTRY.pack(COMMITTED, c, 0, bytes(8)) for c in sorted(self.committed) if c >= W]
        return out


def mapping_digest(blocks) -> bytes:
    h = hashlib.blake2b(digest_size=8)
    for b in sorted(blocks, key=lambda b: b.id):
        h.update(struct.pack(">QI", b.id, b.leaf))
    return h.digest()


class EvictionEngine:
    def __init__(self, ctx: Ctx):
        self.ctx = ctx
        self.p = ctx.p
        self.layout = ctx.layout
        self.pm = PositionMap(self.p.N, self.p.c, ctx.suite)
        self.stash = StashSet(ctx)
        self.logs = LogSet(ctx)
        self.h = self.p.est_height
        self.compact_at = 4 * self.p.k + 16

    @property
    def tr(self):
        return self.ctx.tr

    def _append(self, kind: int, a: int, b: int, digest: bytes = bytes(8)) -> None:
        self.tr.lock_acquire(EVICTION_LOCK, self.p.lock_timeout)
        try:
            self.tr.log_append(LOG, ENTRY.pack(kind, a, b, digest))
        finally:
            self.tr.lock_release(EVICTION_LOCK)

    # -- registration ---------------------------------------------------------
    def register(self) -> int:
        tr, k = self.tr, self.p.k
        while True:
            tr.lock_acquire(EVICTION_LOCK, self.p.lock_timeout)
            try:
                entries = tr.log_read_all(LOG)
                view = LogView.parse(entries)
                ctr = tr.counter_read(CTR)
                if view.min_uncommitted(ctr) > ctr - k:
                    tr.counter_increment(CTR)
                    tr.log_append(LOG, ENTRY.pack(REGISTER, ctr, 0, bytes(8)))
                    if len(entries) + 1 > self.compact_at:
                        view.registered.add(ctr)
                        tr.log_clear(LOG)
                        for e in view.compacted(ctr + 1):
                            tr.log_append(LOG, e)
                    return ctr
            finally:
                tr.lock_release(EVICTION_LOCK)
            tr.sleep(self.p.full_poll)

    # -- processing -------------------------------------------------------------
    def _read_bucket(self, region: str, node: int):
        raw = self.tr.region_read(region, self.layout.offset(node), self.layout.bucket_size)
        return decode_bucket(raw, self.layout, self.ctx.suite)

    def process(self, ctr: int) -> int:
        p, tr, layout, suite = self.p, self.tr, self.layout, self.ctx.suite
        leaf = reverse_lex_path(ctr, p.N)
        nodes = [node_at(leaf, lvl, p.depth) for lvl in range(p.levels)]
        h = self.h
        # stage 1
        lower = [self._read_bucket(WO_TREE, nodes[lvl]) for lvl in range(h, p.levels)]
        # stage 2
        tr.lock_acquire(PROCESSING_LOCK, p.lock_timeout)
        try:
            v = tr.counter_read(PROC_CTR)
            t = v + 1
            prev = self.stash.read_all(tr, cache_stash(v))
            upper = [self._read_bucket(WO_TREE, nodes[lvl]) for lvl in range(h)]
            raw = tr.region_read(log_slots(t - 1), 0, self.logs.nslots * layout.block_env)
            fresh = self.stash.decode(raw)
            pm = self.pm.pm_read_all(tr)
            union = []
            for bk in upper + lower:
                union += bk.real_blocks(p.N)
            union += prev + fresh
            best: Dict[int, Block] = {}
            for b in union:
                cur_stamp = pm[b.id][1]
                if b.stamp > cur_stamp:
                    raise InvariantBreach(f"block {b.id} newer than its position map entry")
                if b.stamp == cur_stamp and b.id not in best:
                    best[b.id] = b
            placed, left = evict_to_path(list(best.values()), leaf, p.N, p.Z)
            body, index = self.stash.encode(left)
            self.ctx.note("stash_peak", len(left))
            cache = [struct.pack(">Q", ctr)]
            for lvl in range(h):
                enc = encode_bucket(placed[lvl], t, layout, suite, self.ctx.rng)
                tr.region_write(WO_TREE, layout.offset(nodes[lvl]), enc)
                cache.append(enc)
            tr.region_create(cache_est(t), b"".join(cache))
            tr.region_create(cache_stash(t), body)
            tr.region_create(stash_slots(t), body)
            tr.region_create(stash_index(t), index)
            tr.counter_increment(PROC_CTR)
        finally:
            tr.lock_release(PROCESSING_LOCK)
        # stage 3
        for lvl in range(h, p.levels):
            enc = encode_bucket(placed[lvl], t, layout, suite, self.ctx.rng)
            tr.region_write(WO_TREE, layout.offset(nodes[lvl]), enc)
        digest = mapping_digest([b for lv in placed for b in lv] + left)
        self._append(PROCESSED, ctr, t, digest)
        return t

    # -- commit -------------------------------------------------------------------
    def _wait_processed(self, t: int) -> Dict[int, int]:
        tr = self.tr
        while True:
            tr.lock_acquire(EVICTION_LOCK, self.p.lock_timeout)
            try:
                view = LogView.parse(tr.log_read_all(LOG))
            finally:
                tr.lock_release(EVICTION_LOCK)
            if view.processed_below(t):
                return view.processed
            tr.sleep(self.p.full_poll)

    def _await_quiet_point(self) -> None:
        """Wait (without the query lock) until the current round is full or
        closed, so that draining it under the lock does not hold up
        registrations. Gives up waiting once registrations stop arriving."""
        tr, p = self.tr, self.p
        last, stable = -1, 0
        while stable < 3:
            d = read_directory(tr)
            if not d.open:
                return
            n = len(tr.log_read_all(qlog(d.round)))
            if n >= p.c:
                return
            stable = stable + 1 if n == last else 0
            last = n
            tr.sleep(p.order_poll)

    def _drain_queries(self, d: Directory) -> None:
        """Wait (holding the query lock) until every registered query of the
        current round has finished."""
        tr = self.tr
        while True:
            registered = len(tr.log_read_all(qlog(d.round)))
            if tr.counter_read(qdone(d.round)) == registered:
                return
            tr.sleep(self.p.order_poll)

    def publish(self, d: Directory, u: int, ctr: int) -> None:
        p, tr, layout = self.p, self.tr, self.layout
        leaf = reverse_lex_path(ctr, p.N)
        size = layout.bucket_size
        for lvl in range(p.levels):
            node = node_at(leaf, lvl, p.depth)
            off = layout.offset(node)
            if lvl < self.h:
                key = str(node)
                if d.est_stamp.get(key, 0) < u:
                    tr.server_copy(cache_est(u), 8 + lvl * size, DATA_TREE, off, size)
                    d.est_stamp[key] = u
            else:
                tr.server_copy(WO_TREE, off, DATA_TREE, off, size)

    def commit(self, ctr: int, t: int) -> None:
        tr, p = self.tr, self.p
        processed = self._wait_processed(t)
        locked = not p.mutated("commit_without_lock")
        if p.background:
            self._await_quiet_point()
        if locked:
            tr.lock_acquire(QUERY_LOCK, p.lock_timeout)
        try:
            d = read_directory(tr)
            if locked:
                self._drain_queries(d)
                d = read_directory(tr)
            for u in range(d.published + 1, t + 1):
                self.publish(d, u, processed[u] if u != t else ctr)
            d.published = max(d.published, t)
            self.ctx.note("eviction", t)
            if t - 1 > d.main and t - 1 not in d.committed:
                self.ctx.note("out_of_order_commit", t)
            dropped = self.stash.stash_set_add(tr, d, t)
            for e in sorted(dropped):
                d.trash += [stash_slots(e), stash_index(e)]
            if t - 1 in d.logs:
                d.logs.remove(t - 1)
            d.trash += [log_slots(t - 1), log_index(t - 1), "log:" + log_rm(t - 1),
                        "log:" + qlog(t - 1), "log:" + drl(t - 1)]
            d.trash += [cache_est(t - 1), cache_stash(t - 1)] if t > 1 else [cache_stash(0)]
            write_directory(tr, d)
        finally:
            if locked:
                tr.lock_release(QUERY_LOCK)
        self._append(COMMITTED, ctr, t)

    def run(self) -> int:
        ctr = self.register()
        t = self.process(ctr)
        self.commit(ctr, t)
        return t
