import random

from concur_oram.core import OramParams
from concur_oram.crypto import make_suite
from concur_oram.server import ServerCore
from concur_oram.sim import LocalTransport
from concur_oram.state import Ctx


def local_ctx(seed=0, **kw):
    """Ctx over a fresh server, with a zero-latency transport."""
    kw.setdefault("N", 16)
    kw.setdefault("B", 8)
    kw.setdefault("c", 4)
    kw.setdefault("k", 4)
    p = OramParams(**kw)
    core = ServerCore()
    tr = LocalTransport(core, "client0")
    return Ctx(p, make_suite("test", b"k", random.Random(seed)), tr, random.Random(seed)), core
