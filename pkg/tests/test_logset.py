import random

from hypothesis import given, strategies as st

from concur_oram.core import Block, InvariantBreach, make_dummy_id
from concur_oram.logset import LogSet, dedupe_newest, drl, log_index, log_rm, qlog
from concur_oram.state import Directory

from helpers import local_ctx

blocks = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 50)), max_size=20)


@given(blocks)
def test_dedupe_newest_matches_oracle(pairs):
    bl = [Block(i, 0, s, b"") for i, s in pairs]
    want = {}
    for i, s in pairs:
        want[i] = max(s, want.get(i, -1))
    got = dedupe_newest(bl)
    assert {b.id: b.stamp for b in got} == want
    assert len(got) == len(want)


def test_query_log_register_ids_and_dups():
    ctx, core = local_ctx()
    ls = LogSet(ctx)
    tr = ctx.tr
    tr.log_clear(qlog(0))
    assert ls.query_log_register(tr, 0, 3) == (0, False)
    assert ls.query_log_register(tr, 0, 3) == (1, True)
    assert ls.query_log_register(tr, 0, None) == (2, True)
    assert ls.query_log_register(tr, 0, 5) == (3, False)
    assert ls.query_log_register(tr, 0, 6) is None      # c = 4, round full
    # entries are encrypted ids of equal length
    assert len({len(e) for e in core.logs[qlog(0)]}) == 1


def _setup_log(ctx, r, live):
    ls = LogSet(ctx)
    ls.create_bigentry(ctx.tr, r, live)
    return ls


def test_bigentry_log_layout():
    ctx, core = local_ctx()
    live = [Block(1, 2, 5, bytes(8)), Block(1, 3, 7, b"newest!!"), Block(make_dummy_id(9, 16), 0, 0, bytes(8))]
    ls = _setup_log(ctx, 0, live)
    index = ls.decode_index(core.regions[log_index(0)])
    assert len(index) == 2 * ctx.p.c
    ids = [b for b, _ in index]
    assert ids.count(1) == 1                      # deduplicated to the newest
    assert all(make_dummy_id(o, 16) in ids for o in range(ctx.p.c))
    assert ls.live_blocks(ctx.tr, 0) == [Block(1, 3, 7, b"newest!!")]


def test_read_log_set_serves_newest_and_removes():
    ctx, core = local_ctx()
    ls = _setup_log(ctx, 0, [Block(4, 1, 3, b"old-----")])
    ls.create_bigentry(ctx.tr, 1, [Block(4, 2, 9, b"new-----")])
    d = Directory(logs=[0, 1])
    found = ls.read_log_set(ctx.tr, d, 4, 2)
    assert [(j, b.data) for j, b in found] == [(1, b"new-----")]
    # both logs drop the id (the older copy was skipped, still removed)
    assert ls.removed(core.logs[log_rm(0)]) == {4}
    assert ls.removed(core.logs[log_rm(1)]) == {4}
    assert ls.read_log_set(ctx.tr, d, 4, 2) == []
    assert ls.live_blocks(ctx.tr, 0) == [] and ls.live_blocks(ctx.tr, 1) == []


def test_read_log_set_shape_independent_of_target():
    shapes = []
    for target in (4, 11, None):
        ctx, core = local_ctx()
        ls = _setup_log(ctx, 0, [Block(4, 1, 3, bytes(8))])
        core.transcript.clear()
        ls.read_log_set(ctx.tr, Directory(logs=[0]), target, 1)
        shapes.append([(e.kind, e.region, e.length) for e in core.transcript])
    assert shapes[0] == shapes[1] == shapes[2]


def test_wait_turn_and_drl_bound():
    ctx, core = local_ctx()
    ls = LogSet(ctx)
    ctx.tr.log_clear(drl(0))
    assert ls.wait_turn(ctx.tr, 0, 0) == []
    for j in range(ctx.p.c):
        ls.write_drl(ctx.tr, 0, Block(j, 0, j + 1, bytes(8)))
    assert [b.id for b in ls.wait_turn(ctx.tr, 0, 4)] == [0, 1, 2, 3]
    try:
        ls.write_drl(ctx.tr, 0, Block(9, 0, 9, bytes(8)))
    except InvariantBreach:
        pass
    else:
        raise AssertionError("DRL grew past c")
    try:
        ls.wait_turn(ctx.tr, 0, 2)
    except InvariantBreach:
        pass
    else:
        raise AssertionError("identifier overtaken without error")


def test_reshuffle_keeps_live_blocks():
    ctx, core = local_ctx()
    ls = _setup_log(ctx, 0, [Block(2, 1, 1, bytes(8)), Block(3, 1, 1, bytes(8))])
    d = Directory(logs=[0], snap_logs=[0])
    ls.read_log_set(ctx.tr, d, 2, 0)
    before = bytes(core.regions["bigentry/0"])
    assert ls.reshuffle(ctx.tr, d, 0) == 0
    assert ls.reshuffle(ctx.tr, d, 1) is None
    ls.swap_in_reshuffled_logs(ctx.tr, d)
    assert bytes(core.regions["bigentry/0"]) != before
    assert [b.id for b in ls.live_blocks(ctx.tr, 0)] == [3]
