"""Drive many clients against one server and summarize the run.

The in-process transport runs every client and eviction as an agent of the
deterministic scheduler, so a run is a pure function of its configuration:
two runs with the same config give the same report and transcript. The
threaded and TCP transports use real threads and wall-clock time and are
only meant for throughput numbers.
"""

from __future__ import annotations

import dataclasses
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from ..client import open_client, setup_oram
from ..core import OpKind, OramParams, block_plain_size
from ..crypto import CipherSuite
from ..server import ServerCore, ThreadedServer
from ..sim import LatencyModel, LocalTransport, SimRuntime
from .linearize import HistoryEntry
from .metrics import Metrics, percentiles_ms
from .workload import Op, Workload


@dataclass
class SimConfig:
    N: int = 64
    B: int = 32
    c: int = 4
    k: int = 4
    Z: int = 4
    S: Optional[int] = None
    max_stash: int = 64
    background: bool = True
    mutations: tuple = ()
    clients: int = 2
    ops: int = 100
    read_fraction: float = 0.5
    distribution: str = "uniform"
    theta: float = 0.99
    seed: int = 0
    rtt: float = 0.001
    jitter: float = 0.5
    stall_prob: float = 0.0
    stall_factor: float = 20.0
    stall_only: str = ""
    stall_ops: tuple = ()
    transport: str = "inproc"
    suite: str = "test"
    record: bool = True
    key: str = "concur-oram-demo-key"
    lock_timeout: float = 30.0
    order_poll: float = 0.010
    full_poll: float = 0.050
    addr: Optional[str] = None
    trace_file: Optional[str] = None

    def params(self) -> OramParams:
        return OramParams(N=self.N, B=self.B, c=self.c, k=self.k, Z=self.Z, S=self.S,
                          max_stash=self.max_stash, lock_timeout=self.lock_timeout,
                          order_poll=self.order_poll, full_poll=self.full_poll,
                          background=self.background, mutations=frozenset(self.mutations))

    def workload(self) -> Workload:
        trace = None
        if self.distribution == "trace":
            if not self.trace_file:
                raise ValueError("distribution=trace needs trace_file")
            with open(self.trace_file) as fh:
                trace = [int(tok) for tok in fh.read().split()]
        return Workload(N=self.N, clients=self.clients, ops=self.ops, read_fraction=self.read_fraction,
                        distribution=self.distribution, theta=self.theta, seed=self.seed, B=self.B,
                        trace=trace)

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_mapping(cls, d: Dict[str, str]) -> "SimConfig":
        """Build from string values (config files, CLI); types follow the defaults."""
        kw = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for name, raw in d.items():
            name = name.strip().replace("-", "_")
            if name not in fields:
                raise ValueError(f"unknown config key {name!r}")
            default = getattr(cls, name, None)
            raw = raw.strip() if isinstance(raw, str) else raw
            if not isinstance(raw, str):
                kw[name] = raw
            elif name in ("mutations", "stall_ops"):
                kw[name] = tuple(x for x in raw.replace(",", " ").split() if x)
            elif name in ("S", "addr"):
                kw[name] = None if raw.lower() in ("", "none") else (int(raw) if name == "S" else raw)
            elif isinstance(default, bool):
                kw[name] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[name] = int(raw)
            elif isinstance(default, float):
                kw[name] = float(raw)
            else:
                kw[name] = raw
        return cls(**kw)


def parse_config_text(text: str) -> Dict[str, str]:
    """key=value lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


_BYTES_OF = {
    OpKind.RegionRead: True, OpKind.RegionWrite: True, OpKind.RegionCreate: True,
    OpKind.LogAppend: True, OpKind.LogRead: True,
}


class ByteCounter:
    """Client-transferred bytes per session class (server-side copies and
    swaps move no bytes over the network)."""

    def __init__(self):
        self.bytes: Dict[str, int] = {}
        self.ops: Dict[str, int] = {}

    @staticmethod
    def cls(session: str) -> str:
        return "evict" if session.startswith("evict") else ("client" if session.startswith("client") else "other")

    def __call__(self, ev, core) -> None:
        c = self.cls(ev.session)
        n = ev.length if ev.kind in _BYTES_OF else (8 if ev.kind in (OpKind.CounterRead, OpKind.CounterIncr) else 0)
        self.bytes[c] = self.bytes.get(c, 0) + n
        self.ops[c] = self.ops.get(c, 0) + 1


@dataclass
class SimResult:
    report: dict
    history: List[HistoryEntry]
    core: Optional[ServerCore]
    params: OramParams
    metrics: Metrics
    elapsed: float
    bytes: ByteCounter = field(default_factory=ByteCounter)

    @property
    def transcript(self):
        return self.core.transcript if self.core is not None else []


def _block_env(params: OramParams) -> int:
    return CipherSuite.overhead + block_plain_size(params.B)


def _client_seed(seed, j: int) -> str:
    return f"{seed}/client{j}"


def _make_report(cfg: SimConfig, params: OramParams, history: List[HistoryEntry], metrics: Metrics,
                 counter: ByteCounter, span: float) -> dict:
    n = len(history)
    lat = [h.end - h.start for h in history]
    return {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()},
        "queries": n,
        "elapsed_s": round(span, 9),
        "throughput_ops_s": round(n / span, 6) if span > 0 else 0.0,
        "latency_ms": percentiles_ms(lat),
        "stash_peak": metrics.peak("stash_peak"),
        "drlogset_peak": metrics.peak("drlogset_peak"),
        "stashset_peak": metrics.peak("stashset_peak"),
        "drl_peak": metrics.peak("drl_peak"),
        "query_log_peak": metrics.peak("query_log_peak"),
        "evictions": metrics.counts.get("eviction", 0),
        "out_of_order_commits": metrics.counts.get("out_of_order_commit", 0),
        "bytes_per_query": round(counter.bytes.get("client", 0) / n, 3) if n else 0.0,
        "blocks_per_query": round(counter.bytes.get("client", 0) / n / _block_env(params), 3) if n else 0.0,
        "eviction_bytes": counter.bytes.get("evict", 0),
    }


def _client_loop(cl, ops: Sequence[Op], name: str, history: list, clock: Callable[[], float]) -> None:
    for op, bid, data in ops:
        t0 = clock()
        res = cl.query(bid, op, data)
        history.append(HistoryEntry(res.stamp, name, op, bid, data, res.value, t0, clock()))


def run_simulation(cfg: SimConfig, plan: Optional[List[List[Op]]] = None,
                   observers: Sequence[Callable] = (), setup_observers: bool = False) -> SimResult:
    """Run a workload and return the JSON-ready report plus the raw history
    and (when ``cfg.record``) the server transcript."""
    if cfg.transport != "inproc":
        return run_threaded(cfg, plan)
    params = cfg.params()
    plan = plan if plan is not None else cfg.workload().per_client()
    key = cfg.key.encode()
    core = ServerCore(record=cfg.record)
    if setup_observers:
        core.observers.extend(observers)
    setup_oram(LocalTransport(core, "setup"), params, key, cfg.suite, seed=cfg.seed)
    counter = ByteCounter()
    core.observers.append(counter)
    if not setup_observers:
        core.observers.extend(observers)
    rt = SimRuntime(core, seed=cfg.seed,
                    latency=LatencyModel(cfg.rtt, cfg.jitter, cfg.stall_prob, cfg.stall_factor, cfg.stall_only,
                                         tuple(cfg.stall_ops)), lock_timeout=cfg.lock_timeout)
    metrics = Metrics()
    history: List[HistoryEntry] = []
    for j, ops in enumerate(plan):
        name = f"client{j}"

        def agent(tr, ops=ops, name=name, j=j):
            cl = open_client(tr, key, cfg.suite, seed=_client_seed(cfg.seed, j), name=name,
                             metrics=metrics, params=params)
            _client_loop(cl, ops, name, history, tr.now)

        rt.spawn(agent, name)
    rt.run()
    span = max((h.end for h in history), default=0.0)
    report = _make_report(cfg, params, history, metrics, counter, span)
    return SimResult(report, history, core, params, metrics, span, counter)


def run_threaded(cfg: SimConfig, plan: Optional[List[List[Op]]] = None) -> SimResult:
    """Real threads over the in-process server ("threads") or TCP ("tcp")."""
    from ..server import DirectTransport
    from ..wire import TcpServer, TcpTransport, parse_addr

    params = cfg.params()
    plan = plan if plan is not None else cfg.workload().per_client()
    key = cfg.key.encode()
    srv = ThreadedServer(record=cfg.record, lock_timeout=cfg.lock_timeout)
    counter = ByteCounter()
    srv.core.observers.append(counter)
    tcp = None
    if cfg.transport == "tcp":
        if cfg.addr:
            host, port = parse_addr(cfg.addr)
            make = lambda name: TcpTransport(host, port, name)
            remote = True
        else:
            tcp = TcpServer(srv, "127.0.0.1", 0)
            tcp.start()
            host, port = tcp.address
            make = lambda name: TcpTransport(host, port, name)
            remote = False
    elif cfg.transport == "threads":
        make = lambda name: DirectTransport(srv, srv.new_session(name), latency=cfg.rtt)
        remote = False
    else:
        raise ValueError(f"unknown transport {cfg.transport!r}")
    try:
        setup_tr = make("setup")
        setup_oram(setup_tr, params, key, cfg.suite, seed=cfg.seed)
        metrics = Metrics()
        history: List[HistoryEntry] = []
        errors: list = []
        transports = []
        t_start = time.monotonic()

        def worker(j, ops):
            tr = make(f"client{j}")
            transports.append(tr)
            try:
                cl = open_client(tr, key, cfg.suite, seed=_client_seed(cfg.seed, j), name=f"client{j}",
                                 metrics=metrics, params=params)
                _client_loop(cl, ops, f"client{j}", history, lambda: time.monotonic() - t_start)
            except BaseException as exc:  # reported below
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(j, ops), daemon=True) for j, ops in enumerate(plan)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        span = max((h.end for h in history), default=0.0)
        for tr in transports:
            join = getattr(tr, "join_children", None)
            if join:
                join(cfg.lock_timeout)
            errors += getattr(tr, "child_errors", [])
        if errors:
            raise errors[0]
        report = _make_report(cfg, params, history, metrics, counter, span)
        return SimResult(report, history, None if remote else srv.core, params, metrics, span, counter)
    finally:
        if tcp is not None:
            tcp.stop()
