import pytest
from hypothesis import given, strategies as st

from concur_oram.core import Block, InvariantBreach, StashOverflow, make_dummy_id
from concur_oram.stashset import (MAIN, StashSet, check_adjacent_exclusion, stash_index, stash_layout,
                                  stash_slots)
from concur_oram.state import Directory

from helpers import local_ctx


def _runs_oracle(C):
    """Split committed ids into maximal runs of consecutive integers; the
    first run (it contains the minimum) is the main prefix, every other run
    is represented by its newest member."""
    xs = sorted(set(C))
    runs = [[xs[0]]]
    for x in xs[1:]:
        if x == runs[-1][-1] + 1:
            runs[-1].append(x)
        else:
            runs.append([x])
    return runs[0][-1], [r[-1] for r in runs[1:]]


@given(st.sets(st.integers(0, 60), min_size=1))
def test_stash_layout_matches_run_oracle(C):
    main, resident = stash_layout(C)
    assert (main, resident) == _runs_oracle(C)
    check_adjacent_exclusion(resident)


@given(st.permutations(list(range(1, 13))))
def test_commits_in_any_order_converge(order):
    ctx, core = local_ctx(N=16, c=4, k=4, max_stash=4)
    ss = StashSet(ctx)
    for e in range(0, 13):
        body, index = ss.encode([])
        core.regions[stash_slots(e)] = bytearray(body)
        core.regions[stash_index(e)] = bytearray(index)
    core.regions[MAIN] = bytearray(core.regions[stash_slots(0)])
    d = Directory()
    done = {0}
    for t in order:
        dropped = ss.stash_set_add(ctx.tr, d, t)
        done.add(t)
        check_adjacent_exclusion(d.stashes)
        assert (d.main, d.stashes) == _runs_oracle(done)
        assert not (dropped & (set(d.stashes) | {d.main}))
    assert d.main == 12 and d.stashes == [] and d.committed == []


def test_adjacent_exclusion_detects():
    with pytest.raises(InvariantBreach):
        check_adjacent_exclusion([3, 4])
    check_adjacent_exclusion([3, 5])


def test_encode_capacity_and_dummies():
    ctx, core = local_ctx(max_stash=3)
    ss = StashSet(ctx)
    with pytest.raises(StashOverflow):
        ss.encode([Block(i, 0, 0, bytes(8)) for i in range(4)])
    body, index = ss.encode([Block(2, 1, 1, bytes(8))])
    assert len(body) == ss.region_size
    ids = [b for b, _ in ss.decode_index(index)]
    assert ids.count(2) == 1
    assert all(make_dummy_id(o, ctx.p.N) in ids for o in range(ctx.p.c))
    assert ss.decode(body) == [Block(2, 1, 1, bytes(8))]


def _resident_setup(target_in):
    ctx, core = local_ctx()
    ss = StashSet(ctx)
    body, index = ss.encode([])
    ctx.tr.region_create(MAIN, body)
    for e in (3, 5):
        blocks = [Block(7, 1, e, bytes([e]) * 8)] if e in target_in else []
        body, index = ss.encode(blocks)
        ctx.tr.region_create(stash_slots(e), body)
        ctx.tr.region_create(stash_index(e), index)
    return ctx, core, ss


def test_read_stash_set_newest_first_fixed_shape():
    shapes = []
    for holders in ((3, 5), (3,), ()):
        ctx, core, ss = _resident_setup(holders)
        core.transcript.clear()
        found = ss.read_stash_set(ctx.tr, Directory(stashes=[3, 5], main=1), 7, 2)
        shapes.append([(e.kind, e.region, e.length) for e in core.transcript])
        if holders:
            assert found == [(f"temp/{max(holders)}", Block(7, 1, max(holders), bytes([max(holders)]) * 8))]
        else:
            assert found == []
    assert shapes[0] == shapes[1] == shapes[2]
    assert [r for _, r, _ in shapes[0]] == [MAIN, stash_index(5), stash_slots(5), stash_index(3), stash_slots(3)]
