import pytest
from hypothesis import given, strategies as st

from concur_oram.core import (Block, OpKind, OramParams, TranscriptEvent, block_plain_size,
                              dummy_ordinal, is_real, make_dummy_id)


def test_defaults():
    p = OramParams()
    assert (p.N, p.B, p.c, p.k, p.Z, p.S) == (1024, 4096, 8, 8, 4, 8)
    assert p.depth == 10 and p.levels == 11
    assert p.est_height == 4
    assert p.slots == 12


@pytest.mark.parametrize("kw", [
    dict(N=12), dict(N=2), dict(k=3), dict(N=8, k=8, c=8), dict(c=4, k=8),
    dict(c=0), dict(Z=0), dict(mutations={"no_such_mutation"}),
])
def test_rejects_bad_params(kw):
    with pytest.raises(ValueError):
        OramParams(**kw)


def test_wrong_est_height_mutation_lowers_height():
    p = OramParams(N=64, c=8, k=8, mutations={"wrong_est_height"})
    assert p.est_height == 3
    assert p.mutated("wrong_est_height")


@given(st.integers(2, 12).map(lambda e: 2 ** e), st.integers(0, 10_000))
def test_dummy_ids_are_distinct_from_real(N, ordinal):
    d = make_dummy_id(ordinal, N)
    assert not is_real(d, N)
    assert dummy_ordinal(d, N) == ordinal
    assert all(is_real(i, N) for i in (0, N - 1))


@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 2 ** 31 - 1), st.integers(0, 2 ** 40),
       st.binary(min_size=16, max_size=16))
def test_block_roundtrip(bid, leaf, stamp, data):
    b = Block(bid, leaf, stamp, data)
    raw = b.pack(16)
    assert len(raw) == block_plain_size(16)
    assert Block.unpack(raw) == b


def test_block_wrong_payload_size():
    with pytest.raises(ValueError):
        Block(1, 0, 0, b"abc").pack(4)


def test_event_dict_roundtrip():
    ev = TranscriptEvent(3, OpKind.RegionRead, "data_tree", 40, 12, "client0", 0, "")
    assert TranscriptEvent.from_dict(ev.as_dict()) == ev
