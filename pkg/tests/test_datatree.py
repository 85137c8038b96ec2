import random

import pytest
from hypothesis import given, strategies as st

from concur_oram.core import Block, OramParams
from concur_oram.crypto import make_suite
from concur_oram.datatree import (EstGeometry, TreeLayout, decode_bucket, decode_head, encode_bucket,
                                  evict_to_path, in_est, initial_placement, longest_common_suffix,
                                  node_at, node_level, path_nodes, reverse_lex_path, shared_levels)

# worked by hand: v = ctr+1 mod 8 written LSB first as the root-to-leaf turns
FROZEN_N8 = [4, 2, 6, 1, 5, 3, 7, 0]

pow2 = st.integers(1, 12).map(lambda e: 2 ** e)


def test_reverse_lex_frozen():
    assert [reverse_lex_path(c, 8) for c in range(8)] == FROZEN_N8
    assert reverse_lex_path(8, 8) == FROZEN_N8[0]


def _turns_oracle(ctr, N):
    """Independent route: string reversal of the binary counter."""
    depth = N.bit_length() - 1
    if depth == 0:
        return 0
    s = format((ctr + 1) % N, f"0{depth}b")[::-1]
    return int(s, 2)


@given(pow2, st.integers(0, 10 ** 6))
def test_reverse_lex_matches_string_oracle(N, ctr):
    assert reverse_lex_path(ctr, N) == _turns_oracle(ctr, N)


@given(pow2)
def test_reverse_lex_is_a_permutation_per_cycle(N):
    if N > 512:
        N = 512
    assert sorted(reverse_lex_path(c, N) for c in range(N)) == list(range(N))


@given(st.integers(1, 16), st.data())
def test_lcs_against_strings(width, data):
    a = data.draw(st.integers(0, 2 ** width - 1))
    b = data.draw(st.integers(0, 2 ** width - 1))
    sa, sb = format(a, f"0{width}b"), format(b, f"0{width}b")
    n = 0
    while n < width and sa[width - 1 - n] == sb[width - 1 - n]:
        n += 1
    assert longest_common_suffix(a, b, width) == n


@given(pow2, st.data())
def test_paths_and_shared_levels(N, data):
    a = data.draw(st.integers(0, N - 1))
    b = data.draw(st.integers(0, N - 1))
    pa, pb = path_nodes(a, N), path_nodes(b, N)
    assert pa[0] == 0 and len(pa) == N.bit_length()
    assert [node_level(n) for n in pa] == list(range(len(pa)))
    assert shared_levels(a, b, N) == len(set(pa) & set(pb))
    assert pa[-1] == N - 1 + a


def test_est_geometry():
    g = EstGeometry.for_params(OramParams(N=64, c=8, k=8))
    assert g.height == 4
    assert [in_est(l, g) for l in range(7)] == [True] * 4 + [False] * 3
    with pytest.raises(ValueError):
        in_est(7, g)


@given(st.integers(2, 6).map(lambda e: 2 ** e), st.integers(1, 4), st.integers(0, 10 ** 6), st.data())
def test_evict_to_path_places_on_own_path(N, Z, seed, data):
    rng = random.Random(seed)
    leaf = data.draw(st.integers(0, N - 1))
    union = [Block(i, rng.randrange(N), 0, b"") for i in range(rng.randrange(3 * N))]
    placed, left = evict_to_path(union, leaf, N, Z)
    depth = N.bit_length() - 1
    assert sorted(b.id for lvl in placed for b in lvl) == sorted(set(b.id for b in union) - {b.id for b in left})
    for level, blocks in enumerate(placed):
        assert len(blocks) <= Z
        for b in blocks:
            assert node_at(b.leaf, level, depth) == node_at(leaf, level, depth)
    # greedy: nothing left over could still have gone to a non-full bucket
    for b in left:
        for level in range(depth + 1):
            if node_at(b.leaf, level, depth) == node_at(leaf, level, depth):
                assert len(placed[level]) == Z


def test_initial_placement_overflow():
    blocks = [Block(i, 0, 0, b"") for i in range(20)]
    buckets, overflow = initial_placement(blocks, 4, 2)
    assert sum(map(len, buckets.values())) == 6   # one path of 3 buckets
    assert len(overflow) == 14


def test_bucket_roundtrip():
    p = OramParams(N=8, B=8, c=2, k=2, Z=2)
    suite = make_suite("test", b"k", random.Random(0))
    layout = TreeLayout(p, suite)
    blocks = [Block(3, 5, 9, bytes(range(8)))]
    raw = encode_bucket(blocks, 7, layout, suite, random.Random(1))
    assert len(raw) == layout.bucket_size
    bk = decode_bucket(raw, layout, suite)
    assert bk.version == 7
    assert bk.real_blocks(p.N) == blocks
    assert decode_head(raw, layout, suite).version == 7
    slot = bk.find(3, 9)
    assert slot is not None and 0 <= slot < p.slots
    assert layout.locate(layout.slot_offset(4, slot))[0] == 4
