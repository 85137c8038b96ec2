import random

import pytest
from hypothesis import given, strategies as st

from concur_oram.core import OpKind, OramError
from concur_oram.crypto import make_suite
from concur_oram.posmap import REGION, PositionMap, pack_entry, unpack_entry
from concur_oram.server import ServerCore
from concur_oram.sim import LocalTransport


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 31 - 1))
def test_entry_roundtrip(leaf, stamp):
    assert unpack_entry(pack_entry(leaf, stamp)) == (leaf, stamp)


def _pm(N, seed=0):
    suite = make_suite("test", b"k", random.Random(seed))
    pm = PositionMap(N, 4, suite)
    core = ServerCore()
    tr = LocalTransport(core)
    entries = [(random.Random(seed + i).randrange(N), 0) for i in range(N)]
    tr.region_create(REGION, pm.encode(entries))
    return pm, tr, core, entries


@pytest.mark.parametrize("N", [8, 64, 256])
def test_read_and_batch_update(N):
    pm, tr, core, entries = _pm(N)
    assert pm.decode(core.regions[REGION]) == entries
    for bid in (0, N - 1, N // 2):
        assert pm.pm_read(tr, bid) == entries[bid]
    fakes = pm.pm_update_batch(tr, [(1, 5 % N, 9), (N - 1, 2, 10)])
    assert fakes == 2
    assert pm.pm_read(tr, N - 1) == (2, 10)
    assert pm.pm_read(tr, 1) == (5 % N, 9)
    assert pm.decode(core.regions[REGION])[2] == entries[2]
    with pytest.raises(OramError):
        pm.pm_update_batch(tr, [(0, 0, 1)] * 5)
    with pytest.raises(OramError):
        pm.pm_read(tr, N)


def test_real_and_dummy_reads_look_alike():
    pm, tr, core, _ = _pm(256)
    core.transcript.clear()
    pm.pm_read(tr, 200)
    pm.pm_read_dummy(tr, 1)
    a, b = core.transcript
    assert (a.kind, a.region, a.length) == (b.kind, b.region, b.length) == (OpKind.RegionRead, REGION, pm.env)
