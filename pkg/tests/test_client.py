import random

import pytest

from concur_oram import open_client, setup_oram
from concur_oram.client import resolve_newest
from concur_oram.core import Block, InvariantBreach, OramError, OramParams
from concur_oram.server import ServerCore, ThreadedServer
from concur_oram.sim import LocalTransport
from concur_oram.harness.linearize import check_linearizable
from concur_oram.harness.runner import SimConfig, run_simulation
from concur_oram.harness.verify import colliding_plan

KEY = b"client test key"


def _local(N=16, B=8, c=2, k=2, initial=None):
    core = ServerCore()
    tr = LocalTransport(core, "setup")
    setup_oram(tr, OramParams(N=N, B=B, c=c, k=k), KEY, suite="test", seed=1, initial=initial)
    return core, open_client(LocalTransport(core, "client0"), KEY, suite="test", seed=2)


def test_initial_contents_and_writes():
    init = [bytes([i]) * 8 for i in range(16)]
    core, cl = _local(initial=init)
    assert cl.read(5) == init[5]
    cl.write(5, b"abc")
    assert cl.read(5) == b"abc" + bytes(5)
    rng = random.Random(0)
    model = {i: init[i] for i in range(16)}
    for _ in range(60):
        bid = rng.randrange(16)
        if rng.random() < 0.5:
            val = rng.randbytes(8)
            cl.write(bid, val)
            model[bid] = val
        else:
            assert cl.read(bid) == model[bid]
    assert all(cl.read(i) == model[i] for i in range(16))


def test_parameters_come_from_server():
    core, cl = _local(N=32, c=4, k=2)
    other = open_client(LocalTransport(core, "client1"), KEY, suite="test", seed=3)
    assert other.params == cl.params
    assert other.params.N == 32 and other.params.k == 2


def test_rejects_bad_requests():
    _, cl = _local()
    with pytest.raises(OramError):
        cl.read(16)
    with pytest.raises(ValueError):
        cl.write(1, bytes(9))
    with pytest.raises(ValueError):
        cl.query(1, "delete")


def test_dummy_query():
    _, cl = _local()
    cl.write(3, b"x" * 8)
    res = cl.query(None)
    assert res.dup
    assert cl.read(3) == b"x" * 8


def test_resolve_newest_rules():
    b = lambda s, tag: Block(1, 0, s, tag * 8)
    assert resolve_newest([("path", b(1, b"p")), ("main", b(4, b"m"))]).data == b"m" * 8
    assert resolve_newest([("log/2", b(4, b"l")), ("drl", b(4, b"d"))]).data == b"d" * 8
    assert resolve_newest([("log/2", b(4, b"a")), ("log/5", b(4, b"b"))]).data == b"b" * 8
    assert resolve_newest([("temp/3", b(2, b"t")), ("main", b(2, b"m"))]).data == b"t" * 8
    with pytest.raises(InvariantBreach):
        resolve_newest([])


def test_duplicate_ids_in_a_round_stay_linearizable():
    cfg = SimConfig(N=16, B=8, c=4, k=4, clients=6, ops=72, seed=11)
    plan = colliding_plan(cfg.workload().per_client(), cfg.N, cfg.B, 11, hot=2)
    res = run_simulation(cfg, plan)
    assert len(res.history) == 72
    # two hot blocks, rounds of four: most rounds repeat an id
    v = check_linearizable(res.history, cfg.N, cfg.B)
    assert v.ok, v.reason


def test_threaded_clients_roundtrip():
    cfg = SimConfig(N=32, B=8, c=4, k=4, clients=4, ops=40, transport="threads", rtt=0.0005,
                    order_poll=0.001, full_poll=0.002)
    res = run_simulation(cfg)
    assert len(res.history) == 40
    assert check_linearizable(res.history, cfg.N, cfg.B).ok
