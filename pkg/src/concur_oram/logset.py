"""Query log, data result log (DRL) and the DR-LogSet of bigentry logs.

Per round ``r``:

* ``query_log/<r>``: one encrypted id per registered query, in arrival order.
  A query's position in this log is its query identifier ``i``.
* ``drl/<r>``: the blocks written back by the round's queries, appended in
  identifier order (each query waits until the DRL holds ``i`` entries).

When the round closes its DRL becomes ``bigentry/<r>``: 2c slots (the
round's distinct blocks, fillers, and c numbered dummies) in random order,
with an encrypted index ``bigentry_index/<r>``. Removing an id from a log's
index is done by appending an encrypted record to ``bigentry_rm/<r>``;
every reader appends exactly one record per live log (a dummy record when
nothing is removed), so the log lengths stay data independent.

Each live log is reshuffled once per round, by the query whose identifier
equals the log's position in the round's snapshot; the copy is written to
``logset_ws/<i>`` and swapped in when the round closes.
"""

from __future__ import annotations

import struct
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .core import Block, InvariantBreach, is_real, make_dummy_id
from .datatree import decode_block
from .state import Ctx, Directory

ID = struct.Struct(">Q")
IDX = struct.Struct(">QQ")


def qlog(r: int) -> str:
    return f"query_log/{r}"


def drl(r: int) -> str:
    return f"drl/{r}"


def log_slots(j: int) -> str:
    return f"bigentry/{j}"


def log_index(j: int) -> str:
    return f"bigentry_index/{j}"


def log_rm(j: int) -> str:
    return f"bigentry_rm/{j}"


def ws_slots(i: int) -> str:
    return f"logset_ws/{i}"


def ws_index(i: int) -> str:
    return f"logset_ws_index/{i}"


def dedupe_newest(blocks: Sequence[Block]) -> List[Block]:
    """Keep the highest-stamped copy of each real id, first-seen order."""
    best: Dict[int, Block] = {}
    for b in blocks:
        cur = best.get(b.id)
        if cur is None or b.stamp > cur.stamp:
            best[b.id] = b
    return list(best.values())


class LogSet:
    def __init__(self, ctx: Ctx):
        self.ctx = ctx
        p = ctx.p
        self.N, self.c, self.B = p.N, p.c, p.B
        self.nslots = 2 * p.c
        self.env = ctx.layout.block_env

    # -- encodings -----------------------------------------------------------
    def _enc_id(self, bid: int) -> bytes:
        return self.ctx.suite.encrypt(ID.pack(bid))

    def _dec_id(self, env: bytes) -> int:
        return ID.unpack(self.ctx.suite.decrypt(env))[0]

    def encode_log(self, live: Sequence[Block]) -> Tuple[bytes, bytes]:
        """Fresh permuted log of 2c slots holding ``live`` (at most c blocks)."""
        if len(live) > self.c:
            raise InvariantBreach("bigentry log holds more than c blocks")
        N, c, B = self.N, self.c, self.B
        slots = list(live)
        slots += [Block.filler(make_dummy_id(c + j, N), B) for j in range(c - len(live))]
        slots += [Block.filler(make_dummy_id(o, N), B) for o in range(c)]
        self.ctx.rng.shuffle(slots)
        enc = self.ctx.suite.encrypt
        body = b"".join(enc(b.pack(B)) for b in slots)
        index = enc(b"".join(IDX.pack(b.id, b.stamp) for b in slots))
        return body, index

    def decode_index(self, env: bytes) -> List[Tuple[int, int]]:
        plain = self.ctx.suite.decrypt(env)
        return [IDX.unpack_from(plain, k * IDX.size) for k in range(self.nslots)]

    @property
    def index_size(self) -> int:
        return self.ctx.suite.envelope_size(IDX.size * self.nslots)

    def removed(self, records: Sequence[bytes]) -> Set[int]:
        out = set()
        for env in records:
            bid = self._dec_id(env)
            if is_real(bid, self.N):
                out.add(bid)
        return out

    # -- query log -------------------------------------------------------------
    def query_log_register(self, tr, r: int, block_id: Optional[int]) -> Optional[Tuple[int, bool]]:
        """Append to the round's query log; caller holds the query lock.

        Returns (identifier, duplicate flag), or None when the round is full.
        ``block_id`` None registers a pure dummy query.
        """
        entries = tr.log_read_all(qlog(r))
        if len(entries) >= self.c:
            return None
        seen = {self._dec_id(e) for e in entries}
        dup = block_id is None or block_id in seen
        tr.log_append(qlog(r), self._enc_id(make_dummy_id(0, self.N) if dup else block_id))
        return len(entries), dup

    # -- reads -------------------------------------------------------------------
    def read_log_set(self, tr, d: Directory, target: Optional[int], i: int) -> List[Tuple[int, Block]]:
        """One slot from every live bigentry log, newest first.

        Real slot if the log still indexes ``target`` and no newer log served
        it, otherwise the dummy numbered ``i``. The served id (or a duplicate
        that was skipped) is removed from the log; other readers append a
        dummy removal record.
        """
        found = []
        have = False
        skip_rm = self.ctx.p.mutated("skip_index_removal")
        for j in reversed(d.logs):
            index = self.decode_index(tr.region_read(log_index(j), 0, self.index_size))
            gone = self.removed(tr.log_read_all(log_rm(j)))
            hit = None
            if target is not None and target not in gone:
                for slot, (bid, _) in enumerate(index):
                    if bid == target:
                        hit = slot
                        break
            remove = hit is not None
            if hit is None or have:
                want = make_dummy_id(i, self.N)
                slot = next(s for s, (bid, _) in enumerate(index) if bid == want)
            else:
                slot = hit
            blk = decode_block(tr.region_read(log_slots(j), slot * self.env, self.env), self.ctx.suite)
            if slot == hit:
                found.append((j, blk))
                have = True
            rec = target if remove and not skip_rm else make_dummy_id(0, self.N)
            tr.log_append(log_rm(j), self._enc_id(rec))
        return found

    def wait_turn(self, tr, r: int, i: int) -> List[Block]:
        """Request-order synchronization: wait until the DRL holds ``i`` blocks."""
        skip = self.ctx.p.mutated("skip_order_sync")
        while True:
            entries = tr.log_read_all(drl(r))
            if len(entries) == i or skip:
                return [decode_block(e, self.ctx.suite) for e in entries]
            if len(entries) > i:
                raise InvariantBreach(f"DRL of round {r} passed identifier {i}")
            tr.sleep(self.ctx.p.order_poll)

    def write_drl(self, tr, r: int, blk: Block) -> int:
        n = tr.log_append(drl(r), self.ctx.suite.encrypt(blk.pack(self.B)))
        if n > self.c:
            raise InvariantBreach(f"DRL of round {r} exceeds c")
        return n

    # -- reshuffles ---------------------------------------------------------------
    def live_blocks(self, tr, j: int) -> List[Block]:
        raw = tr.region_read(log_slots(j), 0, self.nslots * self.env)
        index = self.decode_index(tr.region_read(log_index(j), 0, self.index_size))
        gone = self.removed(tr.log_read_all(log_rm(j)))
        blocks = []
        for slot, (bid, _) in enumerate(index):
            if is_real(bid, self.N) and bid not in gone:
                blocks.append(decode_block(raw[slot * self.env:(slot + 1) * self.env], self.ctx.suite))
        return blocks

    def reshuffle(self, tr, d: Directory, i: int) -> Optional[int]:
        """Reshuffle the log at position ``i`` of the round snapshot into the
        workspace. Returns the log id, or None if there is no such log."""
        if i >= len(d.snap_logs):
            return None
        j = d.snap_logs[i]
        body, index = self.encode_log(self.live_blocks(tr, j))
        tr.region_create(ws_slots(i), body)
        tr.region_create(ws_index(i), index)
        return j

    def swap_in_reshuffled_logs(self, tr, d: Directory) -> int:
        n = 0
        for i, j in enumerate(d.snap_logs[:self.c]):
            tr.ref_swap(ws_slots(i), log_slots(j))
            tr.ref_swap(ws_index(i), log_index(j))
            n += 1
        return n

    # -- round close --------------------------------------------------------------
    def create_bigentry(self, tr, r: int, drl_blocks: Sequence[Block]) -> List[Block]:
        """Turn the round's DRL into bigentry log ``r``; returns its blocks."""
        blocks = dedupe_newest([b for b in drl_blocks if is_real(b.id, self.N)])
        body, index = self.encode_log(blocks)
        tr.region_create(log_slots(r), body)
        tr.region_create(log_index(r), index)
        tr.log_clear(log_rm(r))
        return blocks
