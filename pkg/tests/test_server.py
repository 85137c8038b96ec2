import threading
import time

import pytest

from concur_oram.core import LockTimeout, OpKind, ServerError
from concur_oram.server import ServerCore, ThreadedServer


def test_regions_logs_counters():
    core = ServerCore()
    core.region_create("s", "r", b"abcdef")
    assert core.region_read("s", "r", 2, 3) == b"cde"
    core.region_write("s", "r", 0, b"XY")
    assert core.region_read("s", "r", 0, 6) == b"XYcdef"
    with pytest.raises(ServerError):
        core.region_read("s", "r", 4, 3)
    with pytest.raises(ServerError):
        core.region_read("s", "missing", 0, 1)
    assert core.log_append("s", "l", b"1") == 1
    assert core.log_append("s", "l", b"22") == 2
    assert core.log_read_all("s", "l") == [b"1", b"22"]
    core.log_clear("s", "l")
    assert core.log_read_all("s", "l") == []
    assert core.counter_read("s", "ctr") == 0
    assert [core.counter_increment("s", "ctr") for _ in range(3)] == [1, 2, 3]


def test_copy_and_swap():
    core = ServerCore()
    core.region_create("s", "a", b"0123456789")
    core.region_create("s", "b", bytes(10))
    core.server_copy("s", "a", 2, "b", 5, 3)
    assert core.region_read("s", "b", 0, 10) == bytes(5) + b"234" + bytes(2)
    core.ref_swap("s", "a", "b")
    assert core.region_read("s", "a", 5, 3) == b"234"
    with pytest.raises(ServerError):
        core.server_copy("s", "a", 8, "b", 0, 5)


def test_transcript_records_shape_not_payload():
    core = ServerCore()
    seen = []
    core.observers.append(lambda ev, c: seen.append(ev))
    core.region_create("s1", "r", b"secret!!")
    core.region_read("s2", "r", 0, 8)
    core.log_append("s2", "l", b"payload")
    kinds = [e.kind for e in core.transcript]
    assert kinds == [OpKind.RegionCreate, OpKind.RegionRead, OpKind.LogAppend]
    assert seen == core.transcript
    assert core.transcript[1].session == "s2" and core.transcript[1].length == 8
    assert core.transcript[2].value == 1
    assert [e.seq for e in core.transcript] == [1, 2, 3]
    quiet = ServerCore(record=False)
    quiet.region_create("s", "r", b"x")
    assert quiet.transcript == []


def test_lock_fifo_handoff():
    core = ServerCore()
    assert core.lock_try("a", "L")
    assert not core.lock_try("b", "L")
    assert not core.lock_try("c", "L")
    assert core.lock_release("a", "L") == "b"
    assert core.lock_holder("L") == "b"
    assert core.lock_cancel("c", "L")
    assert core.lock_release("b", "L") is None
    with pytest.raises(ServerError):
        core.lock_release("b", "L")


def test_threaded_lock_timeout_and_drop():
    srv = ThreadedServer(lock_timeout=0.2)
    a, b = srv.transport("a"), srv.transport("b")
    a.lock_acquire("L")
    t0 = time.monotonic()
    with pytest.raises(LockTimeout):
        b.lock_acquire("L", 0.1)
    assert time.monotonic() - t0 >= 0.09
    got = []
    th = threading.Thread(target=lambda: (b.lock_acquire("L", 5.0), got.append(True)))
    th.start()
    time.sleep(0.05)
    srv.drop_session(a.session)   # connection lost: its locks are released
    th.join(2)
    assert got == [True]
    assert srv.core.lock_holder("L") == b.session


def test_threaded_mutual_exclusion():
    srv = ThreadedServer()
    srv.core.counters["x"] = 0
    inside = []

    def worker():
        tr = srv.transport("w")
        for _ in range(20):
            tr.lock_acquire("L")
            inside.append(1)
            assert len(inside) == 1
            inside.pop()
            tr.lock_release("L")

    ths = [threading.Thread(target=worker) for _ in range(4)]
    for t in ths:
        t.start()
    for t in ths:
        t.join()


def test_unknown_op_rejected():
    srv = ThreadedServer()
    with pytest.raises(ServerError):
        srv.invoke("s", "lock_try", "L")
    with pytest.raises(ServerError):
        srv.invoke("s", "_region", "x")


def test_spawn_captures_child_errors():
    srv = ThreadedServer()
    tr = srv.transport("c")

    def boom(t):
        raise RuntimeError("child failed")

    tr.spawn(boom, "evict")
    tr.join_children(2)
    assert len(tr.child_errors) == 1
