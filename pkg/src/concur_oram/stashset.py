"""The main stash and the StashSet of temporary stashes.

An eviction with temporary id ``e`` leaves the blocks it could not place in
``temp_stash/<e>``: MaxStashSize real-capable slots plus c numbered dummies,
randomly permuted, with an encrypted index ``temp_stash_index/<e>``. The main
stash ``stash_main`` has the same layout and is always read in full.

Which stashes are live follows from the set ``C`` of committed evictions
(always containing everything up to ``main``)::

    main       = largest m with 0..m all committed
    resident   = {e in C : e > main and e + 1 not in C}

so a stash is dropped as soon as its successor commits, and two adjacent
stashes are never resident together.
"""

from __future__ import annotations

import struct
from typing import Iterable, List, Optional, Sequence, Set, Tuple

from .core import Block, InvariantBreach, StashOverflow, is_real, make_dummy_id
from .datatree import decode_block
from .state import Ctx, Directory

IDX = struct.Struct(">QQ")
MAIN = "stash_main"


def stash_slots(e: int) -> str:
    return f"temp_stash/{e}"


def stash_index(e: int) -> str:
    return f"temp_stash_index/{e}"


def ws_slots(i: int) -> str:
    return f"stashset_ws/{i}"


def ws_index(i: int) -> str:
    return f"stashset_ws_index/{i}"


def stash_layout(committed: Iterable[int]) -> Tuple[int, List[int]]:
    """(main, resident set) given the committed ids; everything below the
    smallest of them is taken as committed too."""
    C = set(committed)
    m = min(C)
    while m + 1 in C:
        m += 1
    resident = sorted(e for e in C if e > m and e + 1 not in C)
    return m, resident


class StashSet:
    def __init__(self, ctx: Ctx):
        self.ctx = ctx
        p = ctx.p
        self.N, self.c, self.B, self.M = p.N, p.c, p.B, p.max_stash
        self.nslots = p.max_stash + p.c
        self.env = ctx.layout.block_env

    @property
    def region_size(self) -> int:
        return self.nslots * self.env

    @property
    def index_size(self) -> int:
        return self.ctx.suite.envelope_size(IDX.size * self.nslots)

    # -- encodings -------------------------------------------------------------
    def encode(self, blocks: Sequence[Block]) -> Tuple[bytes, bytes]:
        if len(blocks) > self.M:
            raise StashOverflow(f"{len(blocks)} blocks left over, stash holds {self.M}")
        N, c, B = self.N, self.c, self.B
        slots = list(blocks)
        slots += [Block.filler(make_dummy_id(c + j, N), B) for j in range(self.M - len(blocks))]
        slots += [Block.filler(make_dummy_id(o, N), B) for o in range(c)]
        self.ctx.rng.shuffle(slots)
        enc = self.ctx.suite.encrypt
        body = b"".join(enc(b.pack(B)) for b in slots)
        index = enc(b"".join(IDX.pack(b.id, b.stamp) for b in slots))
        return body, index

    def decode(self, raw: bytes) -> List[Block]:
        e = self.env
        out = []
        for k in range(len(raw) // e):
            b = decode_block(raw[k * e:(k + 1) * e], self.ctx.suite)
            if is_real(b.id, self.N):
                out.append(b)
        return out

    def decode_index(self, env: bytes) -> List[Tuple[int, int]]:
        plain = self.ctx.suite.decrypt(env)
        return [IDX.unpack_from(plain, k * IDX.size) for k in range(self.nslots)]

    def read_all(self, tr, name: str) -> List[Block]:
        return self.decode(tr.region_read(name, 0, self.region_size))

    # -- queries ---------------------------------------------------------------
    def read_stash_set(self, tr, d: Directory, target: Optional[int], i: int) -> List[Tuple[str, Block]]:
        """Read the main stash in full, then one slot of every resident
        temporary stash, newest first: the target if that stash holds it and
        it was not already found, else the dummy numbered ``i``."""
        found = []
        for b in self.read_all(tr, MAIN):
            if b.id == target:
                found.append(("main", b))
        have = bool(found)
        skip_dummy = self.ctx.p.mutated("skip_dummy_read")
        for e in reversed(d.stashes):
            index = self.decode_index(tr.region_read(stash_index(e), 0, self.index_size))
            slot = None
            if target is not None and not have:
                slot = next((s for s, (bid, _) in enumerate(index) if bid == target), None)
            real = slot is not None
            if not real:
                if skip_dummy:
                    continue
                want = make_dummy_id(i, self.N)
                slot = next(s for s, (bid, _) in enumerate(index) if bid == want)
            blk = decode_block(tr.region_read(stash_slots(e), slot * self.env, self.env), self.ctx.suite)
            if real:
                found.append((f"temp/{e}", blk))
                have = True
        return found

    def reshuffle(self, tr, d: Directory, i: int) -> Optional[int]:
        """Reshuffle the stash at position ``i`` of the round snapshot into
        the workspace."""
        if i >= len(d.snap_stashes):
            return None
        e = d.snap_stashes[i]
        body, index = self.encode(self.read_all(tr, stash_slots(e)))
        tr.region_create(ws_slots(i), body)
        tr.region_create(ws_index(i), index)
        return e

    def reshuffle_in_place(self, tr, e: int) -> None:
        body, index = self.encode(self.read_all(tr, stash_slots(e)))
        tr.region_write(stash_slots(e), 0, body)
        tr.region_write(stash_index(e), 0, index)

    def swap_in_reshuffled_stashes(self, tr, d: Directory) -> List[int]:
        done = []
        for i, e in enumerate(d.snap_stashes[:self.c]):
            tr.ref_swap(ws_slots(i), stash_slots(e))
            tr.ref_swap(ws_index(i), stash_index(e))
            done.append(e)
        return done

    # -- commits -----------------------------------------------------------------
    def stash_set_add(self, tr, d: Directory, t: int) -> Set[int]:
        """Record eviction ``t`` as committed (caller holds the query lock).

        Updates ``d`` in place, copies the new main stash server side when
        the committed prefix grows, and returns the ids of stashes that are
        no longer needed."""
        before = set(d.stashes) | {d.main}
        main, resident = stash_layout(d.commit_set() + [t])
        if main != d.main:
            tr.server_copy(stash_slots(main), 0, MAIN, 0, self.region_size)
        d.main = main
        d.committed = sorted(e for e in set(d.committed) | {t} if e > main)
        d.stashes = resident
        return (before | {t}) - set(resident) - {main}


def check_adjacent_exclusion(resident: Sequence[int]) -> None:
    s = set(resident)
    for e in s:
        if e + 1 in s:
            raise InvariantBreach(f"temporary stashes {e} and {e + 1} both resident")
