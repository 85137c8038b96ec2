"""Tree geometry and bucket handling for the data tree and the write-only tree.

Nodes use heap numbering: the root is node 0 and the children of node i are
2i+1 and 2i+2. A path is named by its leaf index in [0, N-1]; the leaf's
binary representation (most significant bit first) lists the left(0) or
right(1) turns taken from the root.

Bucket layout in a tree region::

    version (8 bytes, clear) | metadata envelope | Z+S slot envelopes

``version`` is the temporary eviction id of the eviction that wrote the
bucket (0 for the initial tree). It is public: the server sees who writes
each bucket. The metadata lists (block id, stamp) per slot; dummy slots hold
ids N..N+S-1, unused real-capable slots hold ids N+S..N+S+Z-1.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .core import Block, IntegrityError, OramParams, block_plain_size, is_real, make_dummy_id
from .crypto import CipherSuite

META_ENTRY = struct.Struct(">QQ")
VERSION = struct.Struct(">Q")

DATA_TREE = "data_tree"
WO_TREE = "wo_tree"


# -- geometry ---------------------------------------------------------------

def reverse_lex_path(ctr: int, N: int) -> int:
    """Leaf of the eviction path for eviction counter ``ctr``.

    The path's turn string, read from the root, is the binary form of
    v = (ctr + 1) mod N least significant bit first.
    """
    if N < 2 or N & (N - 1):
        raise ValueError("N must be a power of two")
    depth = N.bit_length() - 1
    v = (ctr + 1) % N
    leaf = 0
    for i in range(depth):
        leaf = (leaf << 1) | ((v >> i) & 1)
    return leaf


def longest_common_suffix(a: int, b: int, width: int) -> int:
    """Number of trailing bits shared by the width-bit forms of a and b."""
    x = (a ^ b) & ((1 << width) - 1)
    if x == 0:
        return width
    return (x & -x).bit_length() - 1


def node_at(leaf: int, level: int, depth: int) -> int:
    return (1 << level) - 1 + (leaf >> (depth - level))


def path_nodes(leaf: int, N: int) -> List[int]:
    depth = N.bit_length() - 1
    return [node_at(leaf, lvl, depth) for lvl in range(depth + 1)]


def node_level(node: int) -> int:
    return (node + 1).bit_length() - 1


def shared_levels(leaf_a: int, leaf_b: int, N: int) -> int:
    """How many levels (from the root) two paths have in common."""
    depth = N.bit_length() - 1
    x = leaf_a ^ leaf_b
    return depth + 1 - x.bit_length()


@dataclass(frozen=True)
class EstGeometry:
    """Eviction subtree: the top ``height`` levels shared by concurrent evictions."""

    k: int
    levels: int
    height: int

    @classmethod
    def for_params(cls, params: OramParams) -> "EstGeometry":
        return cls(params.k, params.levels, params.est_height)

    @classmethod
    def standard(cls, k: int, levels: int) -> "EstGeometry":
        return cls(k, levels, min(levels, (k.bit_length() - 1) + 1))


def in_est(level: int, geometry: EstGeometry) -> bool:
    if not 0 <= level < geometry.levels:
        raise ValueError("level out of range")
    return level < geometry.height


# -- layout ------------------------------------------------------------------

class TreeLayout:
    def __init__(self, params: OramParams, suite: CipherSuite):
        self.params = params
        self.N = params.N
        self.levels = params.levels
        self.depth = params.depth
        self.Z, self.S = params.Z, params.S
        self.nslots = params.Z + params.S
        self.block_env = suite.envelope_size(block_plain_size(params.B))
        self.meta_env = suite.envelope_size(META_ENTRY.size * self.nslots)
        self.head_size = VERSION.size + self.meta_env
        self.bucket_size = self.head_size + self.nslots * self.block_env
        self.nodes = 2 * self.N - 1

    @property
    def region_size(self) -> int:
        return self.nodes * self.bucket_size

    def offset(self, node: int) -> int:
        if not 0 <= node < self.nodes:
            raise ValueError("node out of range")
        return node * self.bucket_size

    def bucket_offset(self, level: int, index: int) -> int:
        return self.offset((1 << level) - 1 + index)

    def slot_offset(self, node: int, slot: int) -> int:
        return self.offset(node) + self.head_size + slot * self.block_env

    def locate(self, offset: int) -> Tuple[int, str, int]:
        """Inverse of the offset functions: (node, part, slot)."""
        node, rest = divmod(offset, self.bucket_size)
        if rest < self.head_size:
            return node, "head", -1
        return node, "slot", (rest - self.head_size) // self.block_env


class Bucket:
    """Decrypted bucket contents."""

    __slots__ = ("version", "meta", "blocks")

    def __init__(self, version: int, meta: List[Tuple[int, int]], blocks: Optional[List[Block]] = None):
        self.version = version
        self.meta = meta
        self.blocks = blocks

    def real_blocks(self, N: int) -> List[Block]:
        return [b for b in (self.blocks or []) if is_real(b.id, N)]

    def dummy_slot(self, ordinal: int, N: int) -> int:
        want = make_dummy_id(ordinal, N)
        for slot, (bid, _) in enumerate(self.meta):
            if bid == want:
                return slot
        raise IntegrityError(f"bucket has no dummy numbered {ordinal}")

    def find(self, block_id: int, stamp: int) -> Optional[int]:
        for slot, (bid, st) in enumerate(self.meta):
            if bid == block_id and st == stamp:
                return slot
        return None


def encode_bucket(placed: Sequence[Block], version: int, layout: TreeLayout,
                  suite: CipherSuite, rng: random.Random) -> bytes:
    """Fresh bucket holding ``placed`` plus fillers and S numbered dummies,
    in a random slot order."""
    N, Z, S, B = layout.N, layout.Z, layout.S, layout.params.B
    if len(placed) > Z:
        raise ValueError("too many blocks for one bucket")
    slots = list(placed)
    slots += [Block.filler(make_dummy_id(S + j, N), B) for j in range(Z - len(placed))]
    slots += [Block.filler(make_dummy_id(o, N), B) for o in range(S)]
    rng.shuffle(slots)
    meta = b"".join(META_ENTRY.pack(b.id, b.stamp) for b in slots)
    out = [VERSION.pack(version), suite.encrypt(meta)]
    out += [suite.encrypt(b.pack(B)) for b in slots]
    return b"".join(out)


def decode_head(raw: bytes, layout: TreeLayout, suite: CipherSuite) -> Bucket:
    version = VERSION.unpack_from(raw)[0]
    plain = suite.decrypt(raw[VERSION.size:layout.head_size])
    meta = [META_ENTRY.unpack_from(plain, i * META_ENTRY.size) for i in range(layout.nslots)]
    return Bucket(version, meta)


def decode_block(env: bytes, suite: CipherSuite) -> Block:
    return Block.unpack(suite.decrypt(env))


def decode_slots(raw: bytes, layout: TreeLayout, suite: CipherSuite) -> List[Block]:
    e = layout.block_env
    return [decode_block(raw[i * e:(i + 1) * e], suite) for i in range(len(raw) // e)]


def decode_bucket(raw: bytes, layout: TreeLayout, suite: CipherSuite) -> Bucket:
    bk = decode_head(raw, layout, suite)
    bk.blocks = decode_slots(raw[layout.head_size:], layout, suite)
    for (bid, st), b in zip(bk.meta, bk.blocks):
        if b.id != bid or b.stamp != st:
            raise IntegrityError("bucket metadata does not match its slots")
    return bk


def access_counter(node: int, version: int) -> str:
    """Server counter numbering the accesses to one version of a bucket."""
    return f"bucket_acc/{node}/{version}"


# -- queries -------------------------------------------------------------------

def read_block_from_path(tr, layout: TreeLayout, suite: CipherSuite, leaf: int,
                         target: Optional[Tuple[int, int]], region: str = DATA_TREE,
                         reuse_dummy: bool = False) -> Optional[Block]:
    """Read one slot from every bucket on the path to ``leaf``.

    ``target`` is (block id, stamp) of the wanted version, or None for an
    all-dummy access. Per bucket: read the clear version and the metadata,
    draw a fresh access ordinal from the bucket's counter, then read the real
    slot if the metadata lists the target, else the dummy with that ordinal.
    Once a bucket has served S accesses its dummies are used up and the whole
    bucket is read instead; this depends only on public counter values.
    """
    found = None
    for node in path_nodes(leaf, layout.N):
        off = layout.offset(node)
        bk = decode_head(tr.region_read(region, off, layout.head_size), layout, suite)
        ordinal = tr.counter_increment(access_counter(node, bk.version)) - 1
        slot = bk.find(*target) if target is not None else None
        if reuse_dummy:
            ordinal = 0
        if ordinal >= layout.S:
            raw = tr.region_read(region, off + layout.head_size, layout.nslots * layout.block_env)
            if slot is not None:
                e = layout.block_env
                found = decode_block(raw[slot * e:(slot + 1) * e], suite)
            continue
        if slot is None:
            slot = bk.dummy_slot(ordinal, layout.N)
        blk = decode_block(tr.region_read(region, layout.slot_offset(node, slot), layout.block_env), suite)
        if target is not None and blk.id == target[0]:
            found = blk
    return found


# -- evictions -----------------------------------------------------------------

def evict_to_path(union: Sequence[Block], leaf: int, N: int, Z: int) -> Tuple[List[List[Block]], List[Block]]:
    """Greedy placement of ``union`` onto the path to ``leaf``.

    Levels are filled from the leaf up; at each level the first Z blocks (in
    union order) whose assigned path passes through that bucket are placed.
    Returns per-level block lists (root first) and the leftover blocks.
    """
    depth = N.bit_length() - 1
    remaining = list(union)
    placed: List[List[Block]] = [[] for _ in range(depth + 1)]
    for level in range(depth, -1, -1):
        want = leaf >> (depth - level)
        keep = []
        for b in remaining:
            if len(placed[level]) < Z and (b.leaf >> (depth - level)) == want:
                placed[level].append(b)
            else:
                keep.append(b)
        remaining = keep
    return placed, remaining


def initial_placement(blocks: Iterable[Block], N: int, Z: int) -> Tuple[Dict[int, List[Block]], List[Block]]:
    """Place each block in the deepest non-full bucket of its own path."""
    depth = N.bit_length() - 1
    buckets: Dict[int, List[Block]] = {}
    overflow = []
    for b in blocks:
        for level in range(depth, -1, -1):
            node = node_at(b.leaf, level, depth)
            lst = buckets.setdefault(node, [])
            if len(lst) < Z:
                lst.append(b)
                break
        else:
            overflow.append(b)
    return buckets, overflow
