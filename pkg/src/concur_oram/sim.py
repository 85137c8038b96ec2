"""Deterministic cooperative runtime with virtual time.

Each agent (client session or eviction worker) is a greenlet. Every server
operation travels to the server in half a round trip, executes atomically,
and the answer travels back in the other half; the scheduler always resumes
the agent with the earliest wake-up time. Latencies come from one seeded RNG,
so a run is a pure function of its seed and its agents' code.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from greenlet import getcurrent, greenlet

from .core import InvariantBreach, LockTimeout, OpKind
from .server import ServerCore, Transport


@dataclass
class LatencyModel:
    """Per-operation round trip: ``rtt`` seconds scaled by a uniform factor in
    [1 - jitter, 1 + jitter]; with probability ``stall_prob`` the trip is
    stretched by ``stall_factor`` to shake up interleavings. ``stall_only``
    restricts stalls to sessions whose name starts with it and ``stall_ops``
    (if non-empty) to those operations; stalling evictions on lock
    acquisition makes them commit out of order."""

    rtt: float = 0.001
    jitter: float = 0.5
    stall_prob: float = 0.0
    stall_factor: float = 20.0
    stall_only: str = ""
    stall_ops: tuple = ()

    def draw(self, rng: random.Random, session: str = "", op: str = "") -> float:
        d = self.rtt * (1.0 + self.jitter * (2.0 * rng.random() - 1.0))
        if (self.stall_prob and rng.random() < self.stall_prob and session.startswith(self.stall_only)
                and (not self.stall_ops or op in self.stall_ops)):
            d *= self.stall_factor
        return d


@dataclass
class _Agent:
    name: str
    glet: greenlet
    transport: "SimTransport"
    token: int = 0
    done: bool = False
    daemon: bool = False
    waiting_lock: Optional[str] = None
    result: object = None


class SimRuntime:
    def __init__(self, core: Optional[ServerCore] = None, seed: int = 0,
                 latency: Optional[LatencyModel] = None, lock_timeout: float = 30.0):
        self.core = core or ServerCore()
        self.core.clock = lambda: self.now
        self.rng = random.Random(seed)
        self.latency = latency or LatencyModel()
        self.lock_timeout = lock_timeout
        self.now = 0.0
        self._heap: list = []
        self._agents: Dict[str, _Agent] = {}
        self._hub: Optional[greenlet] = None
        self._names: Dict[str, int] = {}
        self.errors: List[tuple] = []

    # -- agents --------------------------------------------------------
    def _unique(self, name: str) -> str:
        n = self._names.get(name, 0)
        self._names[name] = n + 1
        return name if n == 0 else f"{name}.{n}"

    def spawn(self, fn: Callable[["SimTransport"], object], name: str, daemon: bool = False) -> "SimTransport":
        name = self._unique(name)
        tr = SimTransport(self, name)

        def body(*_):
            try:
                agent.result = fn(tr)
            except BaseException as exc:  # surfaced by run()
                self.errors.append((name, exc))
            finally:
                agent.done = True

        agent = _Agent(name, greenlet(body), tr, daemon=daemon)
        self._agents[name] = agent
        self._wake(agent, self.now, None)
        return tr

    def agent(self, name: str) -> _Agent:
        return self._agents[name]

    # -- scheduling ----------------------------------------------------
    def _wake(self, agent: _Agent, at: float, value) -> None:
        agent.token += 1
        heapq.heappush(self._heap, (at, self.rng.random(), agent.name, agent.token, value))

    def _suspend(self, agent: _Agent):
        value = self._hub.switch()
        if isinstance(value, BaseException):
            raise value
        return value

    def _current(self) -> _Agent:
        g = getcurrent()
        for a in self._agents.values():
            if a.glet is g:
                return a
        raise RuntimeError("not running inside a simulated agent")

    def run(self, until: Optional[float] = None, stop_on_error: bool = True) -> None:
        """Run agents until none are runnable (or virtual time passes ``until``)."""
        self._hub = getcurrent()
        for a in self._agents.values():
            a.glet.parent = self._hub
        while self._heap:
            at, _, name, token, value = heapq.heappop(self._heap)
            agent = self._agents[name]
            if agent.done or token != agent.token:
                continue
            if until is not None and at > until:
                heapq.heappush(self._heap, (at, 0.0, name, token, value))
                return
            self.now = max(self.now, at)
            if agent.glet.parent is not self._hub:
                agent.glet.parent = self._hub
            agent.glet.switch(value)
            if self.errors and stop_on_error:
                name, exc = self.errors[0]
                raise exc
        stuck = [a.name for a in self._agents.values() if not a.done and not a.daemon]
        if stuck:
            raise InvariantBreach(f"deadlock: agents {stuck} blocked with nothing runnable")

    def pending(self) -> List[str]:
        return [a.name for a in self._agents.values() if not a.done]

    # -- operations (called from agent greenlets) -----------------------
    def op(self, agent: _Agent, op: str, args: tuple):
        d = self.latency.draw(self.rng, agent.name, op)
        self._wake(agent, self.now + d / 2, None)
        self._suspend(agent)
        try:
            result = getattr(self.core, op)(agent.name, *args)
            err = None
        except Exception as exc:
            result, err = None, exc
        self._wake(agent, self.now + d / 2, None)
        self._suspend(agent)
        if err is not None:
            raise err
        return result

    def acquire(self, agent: _Agent, name: str, timeout: Optional[float]) -> None:
        timeout = self.lock_timeout if timeout is None or timeout <= 0 else timeout
        d = self.latency.draw(self.rng, agent.name, "lock_acquire:" + name)
        self._wake(agent, self.now + d / 2, None)
        self._suspend(agent)
        if self.core.lock_try(agent.name, name):
            self._wake(agent, self.now + d / 2, None)
            self._suspend(agent)
            return
        agent.waiting_lock = name
        self._wake(agent, self.now + timeout, "timeout")
        value = self._suspend(agent)
        agent.waiting_lock = None
        if value == "timeout" and self.core.lock_cancel(agent.name, name):
            raise LockTimeout(f"{agent.name} timed out waiting for {name!r}")

    def release(self, agent: _Agent, name: str) -> None:
        d = self.latency.draw(self.rng, agent.name, "lock_release:" + name)
        self._wake(agent, self.now + d / 2, None)
        self._suspend(agent)
        nxt = self.core.lock_release(agent.name, name)
        if nxt is not None:
            other = self._agents.get(nxt)
            if other is not None and other.waiting_lock == name:
                self._wake(other, self.now + self.latency.draw(self.rng, other.name) / 2, "granted")
        self._wake(agent, self.now + d / 2, None)
        self._suspend(agent)

    def sleep(self, agent: _Agent, seconds: float) -> None:
        self._wake(agent, self.now + max(0.0, seconds), None)
        self._suspend(agent)


class SimTransport(Transport):
    def __init__(self, runtime: SimRuntime, session: str):
        self.rt = runtime
        self.session = session

    @property
    def _agent(self) -> _Agent:
        return self.rt._agents[self.session]

    def call(self, op, *args):
        return self.rt.op(self._agent, op, args)

    def lock_acquire(self, name, timeout=None):
        return self.rt.acquire(self._agent, name, timeout)

    def lock_release(self, name):
        return self.rt.release(self._agent, name)

    def transcript_dump(self):
        return self.rt.core.transcript_dump()

    def sleep(self, seconds):
        self.rt.sleep(self._agent, seconds)

    def now(self):
        return self.rt.now

    def spawn(self, fn, name, daemon: bool = False):
        return self.rt.spawn(fn, name, daemon=daemon)


class LocalTransport(Transport):
    """Zero-latency transport used outside any scheduler (setup, tests)."""

    def __init__(self, core: ServerCore, session: str = "setup"):
        self.core = core
        self.session = session
        self._clock = 0.0

    def call(self, op, *args):
        return getattr(self.core, op)(self.session, *args)

    def lock_acquire(self, name, timeout=None):
        if not self.core.lock_try(self.session, name):
            raise LockTimeout(f"lock {name!r} busy (no scheduler to wait on)")

    def lock_release(self, name):
        self.core.lock_release(self.session, name)

    def transcript_dump(self):
        return self.core.transcript_dump()

    def sleep(self, seconds):
        self._clock += seconds

    def now(self):
        return self._clock

    def spawn(self, fn, name, daemon: bool = False):
        # run inline: there is no concurrency without a scheduler
        fn(LocalTransport(self.core, name))
