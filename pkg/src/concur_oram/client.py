"""Stateless query clients.

A query for block ``id`` runs these steps, each with a fixed access shape:

1. register in the round's query log under the query lock; the position in
   the log is the query identifier ``i``. A second query for the same id in
   one round registers a dummy entry and does an all-dummy access.
2. read the StashSet (main stash, one slot per temporary stash) and
   reshuffle the temporary stash at snapshot position ``i``.
3. read the position map (or a random super-block).
4. read one slot per bucket on the mapped path (or a random path).
5. read one slot per live bigentry log.
6. wait until the DRL holds ``i`` blocks, then read it.
7. pick the newest copy, apply the write, and append the new version (with
   a fresh random leaf) to the DRL.
8. reshuffle the bigentry log at snapshot position ``i``.
9. the last query of a round (``i = c-1``) closes it: turns the DRL into a
   bigentry log, applies the round's position map updates, swaps in the
   reshuffled logs and stashes, and starts an eviction.

Step 5 comes before step 6 so that queries of one round only serialize on
the short DRL append. This is sound because a non-duplicate query's id is
never in its own round's DRL.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .core import Block, InvariantBreach, OramError, OramParams, StashOverflow, is_real, make_dummy_id
from .crypto import CipherSuite, make_suite
from .datatree import DATA_TREE, WO_TREE, encode_bucket, initial_placement, read_block_from_path
from .eviction import LOG, EvictionEngine, cache_stash, qdone
from .logset import LogSet, drl, qlog
from .posmap import REGION as PM_REGION, PositionMap
from .state import (CONFIG, QUERY_LOCK, Ctx, Directory, params_from_json, params_to_json,
                    read_directory, write_directory, DIRECTORY)
from .stashset import MAIN, StashSet, check_adjacent_exclusion, stash_index, stash_slots

_LEN = struct.Struct(">I")
CONFIG_SIZE = 1024

# precedence among copies with equal stamps (only identical copies tie)
_RANK = {"drl": 0, "log": 1, "temp": 2, "main": 3, "path": 4}


def _source_key(source: str) -> Tuple[int, int]:
    kind, _, num = source.partition("/")
    return _RANK[kind], -int(num) if num else 0


def resolve_newest(candidates: Sequence[Tuple[str, Block]]) -> Block:
    """Newest copy among (source, block) candidates.

    Sources are "drl", "log/<j>", "temp/<e>", "main" and "path". Stamps order
    versions; on equal stamps the DRL beats newer logs, which beat older
    logs, then temporary stashes (newest first), the main stash and the path.
    """
    if not candidates:
        raise InvariantBreach("no copy of the block was found")
    best = None
    for src, blk in candidates:
        key = (-blk.stamp, _source_key(src))
        if best is None or key < best[0]:
            best = (key, blk)
    return best[1]


@dataclass
class QueryResult:
    value: bytes
    round: int
    ident: int
    dup: bool
    stamp: int
    closer: bool = False

    @property
    def seq(self) -> int:
        return self.stamp


class Client:
    """One query session. Holds no protocol state between queries."""

    def __init__(self, ctx: Ctx, name: str = "client"):
        self.ctx = ctx
        self.name = name
        self.logs = LogSet(ctx)
        self.stash = StashSet(ctx)
        self.pm = PositionMap(ctx.p.N, ctx.p.c, ctx.suite)
        self.evictions_spawned = 0

    @property
    def params(self) -> OramParams:
        return self.ctx.p

    # -- public API ---------------------------------------------------------
    def read(self, block_id: int) -> bytes:
        return self.query(block_id).value

    def write(self, block_id: int, data: bytes) -> None:
        self.query(block_id, "write", data)

    def close(self) -> None:
        self.ctx.tr.close()

    # -- protocol ------------------------------------------------------------
    def _register(self, block_id: Optional[int]):
        tr, p = self.ctx.tr, self.ctx.p
        while True:
            # cheap look first, so waiting clients do not crowd the lock
            d = read_directory(tr)
            if not d.open or len(tr.log_read_all(qlog(d.round))) >= p.c:
                tr.sleep(p.full_poll)
                continue
            tr.lock_acquire(QUERY_LOCK, p.lock_timeout)
            try:
                d = read_directory(tr)
                reg = self.logs.query_log_register(tr, d.round, block_id) if d.open else None
            finally:
                tr.lock_release(QUERY_LOCK)
            if reg is not None:
                return d, reg[0], reg[1]
            tr.sleep(p.full_poll)

    def query(self, block_id: Optional[int], op: str = "read", data: Optional[bytes] = None) -> QueryResult:
        """Read or write one block. ``block_id`` None issues a dummy query."""
        ctx, tr, p = self.ctx, self.ctx.tr, self.ctx.p
        if block_id is not None and not is_real(block_id, p.N):
            raise OramError(f"block id {block_id} outside [0, {p.N})")
        if op not in ("read", "write"):
            raise ValueError(f"unknown operation {op!r}")
        if op == "write":
            if data is None or len(data) > p.B:
                raise ValueError(f"write payload must be at most {p.B} bytes")
            data = bytes(data).ljust(p.B, b"\0")
        rng = ctx.rng
        random_leaf = rng.randrange(p.N)
        new_leaf = rng.randrange(p.N)
        random_super = rng.randrange(self.pm.nsuper)

        d, i, dup = self._register(block_id)
        r = d.round
        target = None if dup else block_id
        ctx.note("query_log_peak", i + 1)

        cands: List[Tuple[str, Block]] = list(self.stash.read_stash_set(tr, d, target, i))
        self.stash.reshuffle(tr, d, i)
        if target is not None:
            leaf, stamp = self.pm.pm_read(tr, target)
            want = (target, stamp)
        else:
            self.pm.pm_read_dummy(tr, random_super)
            leaf, want = random_leaf, None
        blk = read_block_from_path(tr, ctx.layout, ctx.suite, leaf, want,
                                   reuse_dummy=p.mutated("reuse_dummy_slot"))
        if blk is not None:
            cands.append(("path", blk))
        cands += [(f"log/{j}", b) for j, b in self.logs.read_log_set(tr, d, target, i)]

        drl_blocks = self.logs.wait_turn(tr, r, i)
        stamp_new = r * p.c + i + 1
        if block_id is None:
            value = bytes(p.B)
            new = Block(make_dummy_id(0, p.N), 0, stamp_new, bytes(p.B))
        else:
            cands += [("drl", b) for b in drl_blocks if b.id == block_id]
            old = resolve_newest([(s, b) for s, b in cands if b.id == block_id])
            value = old.data
            new = Block(block_id, new_leaf, stamp_new, data if op == "write" else old.data)
        n = self.logs.write_drl(tr, r, new)
        ctx.note("drl_peak", n)
        self.logs.reshuffle(tr, d, i)

        closer = i == p.c - 1
        if closer:
            trash, opened = self._close_round(r, drl_blocks + [new])
        tr.counter_increment(qdone(r))
        if closer:
            self._after_close(r, trash, opened)
        return QueryResult(value, r, i, dup, stamp_new, closer)

    # -- round close -----------------------------------------------------------
    def _close_round(self, r: int, round_blocks: List[Block]) -> Tuple[List[str], bool]:
        """Turn round ``r`` into bigentry log ``r`` and apply its position map
        updates. With background evictions the next round opens in the same
        directory write (when the DR-LogSet has room). Returns the regions to
        delete and whether the next round was opened.

        No query lock is needed: registrations wait for an open round, and a
        committing eviction waits until this round's queries are done."""
        ctx, tr, p = self.ctx, self.ctx.tr, self.ctx.p
        while tr.counter_read(qdone(r)) != p.c - 1:
            tr.sleep(p.order_poll)
        d = read_directory(tr)
        if len(d.logs) >= p.c:
            raise InvariantBreach("DR-LogSet full at round close")
        blocks = self.logs.create_bigentry(tr, r, round_blocks)
        self.pm.pm_update_batch(tr, [(b.id, b.leaf, b.stamp) for b in blocks])
        self.logs.swap_in_reshuffled_logs(tr, d)
        covered = set(self.stash.swap_in_reshuffled_stashes(tr, d))
        for e in d.stashes:
            if e not in covered:
                self.stash.reshuffle_in_place(tr, e)
        trash, d.trash = d.trash, []
        d.logs = d.logs + [r]
        d.open = False
        opened = p.background and len(d.logs) < p.c
        if opened:
            self._open_round(d, r + 1)
        check_adjacent_exclusion(d.stashes)
        write_directory(tr, d)
        ctx.note("drlogset_peak", len(d.logs))
        ctx.note("stashset_peak", len(d.stashes))
        return trash, opened

    def _open_round(self, d: Directory, r: int) -> None:
        tr = self.ctx.tr
        tr.log_clear(qlog(r))
        tr.log_clear(drl(r))
        d.round, d.open = r, True
        d.snap_logs, d.snap_stashes = list(d.logs), list(d.stashes)

    def _after_close(self, r: int, trash: List[str], opened: bool) -> None:
        ctx, tr, p = self.ctx, self.ctx.tr, self.ctx.p
        self.evictions_spawned += 1
        if p.background:
            seed = ctx.rng.getrandbits(64)

            def agent(etr):
                EvictionEngine(ctx.with_transport(etr, random.Random(seed))).run()

            tr.spawn(agent, f"evict{r}")
        else:
            EvictionEngine(ctx).run()
        # nothing references these any more
        for name in trash:
            if name.startswith("log:"):
                tr.log_delete(name[4:])
            else:
                tr.region_delete(name)
        while not opened:
            tr.lock_acquire(QUERY_LOCK, p.lock_timeout)
            try:
                d = read_directory(tr)
                if d.round == r and len(d.logs) < p.c:
                    self._open_round(d, r + 1)
                    write_directory(tr, d)
                    return
            finally:
                tr.lock_release(QUERY_LOCK)
            tr.sleep(p.full_poll)


# -- setup / open ---------------------------------------------------------------

def _suite_for(kind: str, key: bytes, seed) -> CipherSuite:
    rng = random.Random(seed) if seed is not None else None
    if kind == "test" and rng is None:
        rng = random.Random()
    return make_suite(kind, key, rng)


def setup_oram(tr, params: OramParams, key: bytes, suite: str = "aesgcm", seed=None,
               initial: Optional[Sequence[bytes]] = None) -> None:
    """Create every server structure for a fresh ORAM holding N blocks.

    Block ``i`` starts with payload ``initial[i]`` (zeros if not given) on a
    random leaf. Blocks that do not fit in the tree start in the main stash.
    """
    rng = random.Random(seed)
    cs = _suite_for(suite, key, rng.getrandbits(64) if seed is not None else None)
    ctx = Ctx(params, cs, tr, rng)
    p, layout = params, ctx.layout
    blocks = []
    for bid in range(p.N):
        payload = bytes(p.B) if initial is None else bytes(initial[bid]).ljust(p.B, b"\0")
        blocks.append(Block(bid, rng.randrange(p.N), 0, payload))
    buckets, overflow = initial_placement(blocks, p.N, p.Z)
    tree = b"".join(encode_bucket(buckets.get(node, []), 0, layout, cs, rng) for node in range(layout.nodes))

    cfg = params_to_json(p)
    tr.region_create(CONFIG, _LEN.pack(len(cfg)) + cfg + bytes(CONFIG_SIZE - _LEN.size - len(cfg)))
    tr.region_create(DATA_TREE, tree)
    tr.region_create(WO_TREE, tree)
    pm = PositionMap(p.N, p.c, cs)
    tr.region_create(PM_REGION, pm.encode([(b.leaf, 0) for b in blocks]))
    stash = StashSet(ctx)
    body, index = stash.encode(overflow)
    tr.region_create(stash_slots(0), body)
    tr.region_create(stash_index(0), index)
    tr.region_create(cache_stash(0), body)
    tr.region_create(MAIN, body)
    tr.region_create(DIRECTORY, Directory().encode())
    tr.log_clear(qlog(0))
    tr.log_clear(drl(0))
    tr.log_clear(LOG)


def read_params(tr) -> OramParams:
    head = tr.region_read(CONFIG, 0, CONFIG_SIZE)
    n = _LEN.unpack_from(head)[0]
    return params_from_json(head[_LEN.size:_LEN.size + n])


def open_client(tr, key: bytes, suite: str = "aesgcm", seed=None, name: str = "client",
                metrics=None, params: Optional[OramParams] = None) -> Client:
    """Connect a stateless client; parameters come from the server's config
    region unless given."""
    params = params or read_params(tr)
    rng = random.Random(seed) if seed is not None else random.Random()
    cs = _suite_for(suite, key, rng.getrandbits(64) if seed is not None else None)
    return Client(Ctx(params, cs, tr, rng, metrics), name)
