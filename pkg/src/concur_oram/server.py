"""The honest-but-curious storage server.

``ServerCore`` holds named regions, append-only logs, counters and FIFO
locks, and records every access as a ``TranscriptEvent``. It never blocks:
lock requests that cannot be granted are queued and granted on release.
Blocking behaviour is supplied by a runtime: ``ThreadedServer`` for real
threads (and the TCP front end), or ``concur_oram.sim`` for the
deterministic cooperative scheduler.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable, Deque, Dict, List, Optional

from .core import LockTimeout, OpKind, ServerError, TranscriptEvent


class _Lock:
    __slots__ = ("holder", "waiters")

    def __init__(self):
        self.holder: Optional[str] = None
        self.waiters: Deque[str] = deque()


class ServerCore:
    """Server state plus transcript. Not thread safe on its own."""

    def __init__(self, record: bool = True, clock: Optional[Callable[[], float]] = None):
        self.regions: Dict[str, bytearray] = {}
        self.logs: Dict[str, List[bytes]] = {}
        self.counters: Dict[str, int] = {}
        self.locks: Dict[str, _Lock] = {}
        self.transcript: List[TranscriptEvent] = []
        self.record = record
        self.clock = clock or (lambda: 0.0)
        self.observers: List[Callable[[TranscriptEvent, "ServerCore"], None]] = []
        self._seq = 0

    # -- bookkeeping -------------------------------------------------
    def _event(self, kind, region, offset=0, length=0, session="", value=0, target=""):
        self._seq += 1
        ev = TranscriptEvent(self._seq, kind, region, offset, length, session, value, target, self.clock())
        if self.record:
            self.transcript.append(ev)
        for obs in self.observers:
            obs(ev, self)
        return ev

    def _region(self, name: str) -> bytearray:
        try:
            return self.regions[name]
        except KeyError:
            raise ServerError(f"unknown region {name!r}") from None

    def _log(self, name: str) -> List[bytes]:
        try:
            return self.logs[name]
        except KeyError:
            raise ServerError(f"unknown log {name!r}") from None

    # -- regions -----------------------------------------------------
    def region_create(self, session: str, name: str, data: bytes) -> None:
        self.regions[name] = bytearray(data)
        self._event(OpKind.RegionCreate, name, 0, len(data), session)

    def region_delete(self, session: str, name: str) -> None:
        self._region(name)
        del self.regions[name]
        self._event(OpKind.RegionDelete, name, 0, 0, session)

    def region_exists(self, name: str) -> bool:
        return name in self.regions

    def region_read(self, session: str, name: str, offset: int, length: int) -> bytes:
        buf = self._region(name)
        if offset < 0 or length < 0 or offset + length > len(buf):
            raise ServerError(f"read {offset}+{length} out of range for {name!r} ({len(buf)})")
        self._event(OpKind.RegionRead, name, offset, length, session)
        return bytes(buf[offset:offset + length])

    def region_write(self, session: str, name: str, offset: int, data: bytes) -> None:
        buf = self._region(name)
        if offset < 0 or offset + len(data) > len(buf):
            raise ServerError(f"write {offset}+{len(data)} out of range for {name!r} ({len(buf)})")
        buf[offset:offset + len(data)] = data
        self._event(OpKind.RegionWrite, name, offset, len(data), session)

    # -- logs --------------------------------------------------------
    def log_append(self, session: str, name: str, entry: bytes) -> int:
        log = self.logs.setdefault(name, [])
        log.append(bytes(entry))
        self._event(OpKind.LogAppend, name, len(log) - 1, len(entry), session, len(log))
        return len(log)

    def log_read_all(self, session: str, name: str) -> List[bytes]:
        log = self._log(name)
        self._event(OpKind.LogRead, name, 0, sum(map(len, log)), session, len(log))
        return list(log)

    def log_clear(self, session: str, name: str) -> None:
        self.logs[name] = []
        self._event(OpKind.LogClear, name, 0, 0, session)

    def log_delete(self, session: str, name: str) -> None:
        self._log(name)
        del self.logs[name]
        self._event(OpKind.RegionDelete, name, 0, 0, session, 1)

    # -- counters ----------------------------------------------------
    def counter_read(self, session: str, name: str) -> int:
        v = self.counters.get(name, 0)
        self._event(OpKind.CounterRead, name, 0, 8, session, v)
        return v

    def counter_increment(self, session: str, name: str) -> int:
        v = self.counters.get(name, 0) + 1
        self.counters[name] = v
        self._event(OpKind.CounterIncr, name, 0, 8, session, v)
        return v

    # -- copy / swap -------------------------------------------------
    def server_copy(self, session: str, src: str, src_off: int, dst: str, dst_off: int, length: int) -> None:
        s, d = self._region(src), self._region(dst)
        if min(src_off, dst_off, length) < 0 or src_off + length > len(s) or dst_off + length > len(d):
            raise ServerError("server_copy range out of bounds")
        d[dst_off:dst_off + length] = s[src_off:src_off + length]
        self._event(OpKind.ServerCopy, src, src_off, length, session, dst_off, dst)

    def ref_swap(self, session: str, a: str, b: str) -> None:
        ra, rb = self._region(a), self._region(b)
        self.regions[a], self.regions[b] = rb, ra
        self._event(OpKind.RefSwap, a, 0, 0, session, 0, b)

    # -- locks (non-blocking halves) -----------------------------------
    def lock_try(self, session: str, name: str) -> bool:
        """Request ``name``; True if granted now, else the session is queued."""
        lk = self.locks.setdefault(name, _Lock())
        if lk.holder is None and not lk.waiters:
            lk.holder = session
            self._event(OpKind.LockAcquire, name, 0, 0, session)
            return True
        if session not in lk.waiters and lk.holder != session:
            lk.waiters.append(session)
        return False

    def lock_release(self, session: str, name: str) -> Optional[str]:
        """Release; returns the session that now holds the lock, if any."""
        lk = self.locks.get(name)
        if lk is None or lk.holder != session:
            raise ServerError(f"{session!r} does not hold lock {name!r}")
        self._event(OpKind.LockRelease, name, 0, 0, session)
        lk.holder = None
        if lk.waiters:
            nxt = lk.waiters.popleft()
            lk.holder = nxt
            self._event(OpKind.LockAcquire, name, 0, 0, nxt)
            return nxt
        return None

    def lock_cancel(self, session: str, name: str) -> bool:
        """Withdraw a queued request. False if it was granted meanwhile."""
        lk = self.locks.get(name)
        if lk is None:
            return False
        if lk.holder == session:
            return False
        try:
            lk.waiters.remove(session)
        except ValueError:
            pass
        return True

    def lock_holder(self, name: str) -> Optional[str]:
        lk = self.locks.get(name)
        return lk.holder if lk else None

    def transcript_dump(self) -> List[TranscriptEvent]:
        return list(self.transcript)


class Transport:
    """Client-side view of a server session. Operations are issued strictly
    in order; each call returns once the server has answered."""

    session: str = ""

    def call(self, op: str, *args):
        raise NotImplementedError

    def region_read(self, name, offset, length) -> bytes:
        return self.call("region_read", name, offset, length)

    def region_write(self, name, offset, data) -> None:
        return self.call("region_write", name, offset, bytes(data))

    def region_create(self, name, data) -> None:
        return self.call("region_create", name, bytes(data))

    def region_delete(self, name) -> None:
        return self.call("region_delete", name)

    def log_append(self, name, entry) -> int:
        return self.call("log_append", name, bytes(entry))

    def log_read_all(self, name) -> List[bytes]:
        return self.call("log_read_all", name)

    def log_clear(self, name) -> None:
        return self.call("log_clear", name)

    def log_delete(self, name) -> None:
        return self.call("log_delete", name)

    def counter_read(self, name) -> int:
        return self.call("counter_read", name)

    def counter_increment(self, name) -> int:
        return self.call("counter_increment", name)

    def server_copy(self, src, src_off, dst, dst_off, length) -> None:
        return self.call("server_copy", src, src_off, dst, dst_off, length)

    def ref_swap(self, a, b) -> None:
        return self.call("ref_swap", a, b)

    def lock_acquire(self, name, timeout: Optional[float] = None) -> None:
        raise NotImplementedError

    def lock_release(self, name) -> None:
        raise NotImplementedError

    def transcript_dump(self) -> List[TranscriptEvent]:
        raise NotImplementedError

    # runtime services
    def sleep(self, seconds: float) -> None:
        raise NotImplementedError

    def now(self) -> float:
        raise NotImplementedError

    def spawn(self, fn: Callable[["Transport"], None], name: str):
        """Run ``fn`` as a new background agent with its own session."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class ThreadedServer:
    """Thread-safe facade over ``ServerCore`` with blocking FIFO locks."""

    def __init__(self, record: bool = True, lock_timeout: float = 30.0):
        self._t0 = time.monotonic()
        self.core = ServerCore(record=record, clock=lambda: time.monotonic() - self._t0)
        self.mutex = threading.Lock()
        self.cond = threading.Condition(self.mutex)
        self.lock_timeout = lock_timeout
        self._sessions = 0

    def new_session(self, prefix: str = "s") -> str:
        with self.mutex:
            self._sessions += 1
            return f"{prefix}{self._sessions}"

    def invoke(self, session: str, op: str, *args):
        if op == "lock_acquire":
            name, timeout = args[0], (args[1] if len(args) > 1 else None)
            return self.acquire(session, name, timeout)
        if op == "lock_release":
            with self.cond:
                self.core.lock_release(session, args[0])
                self.cond.notify_all()
            return None
        if op == "transcript_dump":
            with self.mutex:
                return self.core.transcript_dump()
        fn = getattr(self.core, op, None)
        if fn is None or op.startswith("_") or op in ("lock_try", "lock_cancel"):
            raise ServerError(f"unknown operation {op!r}")
        with self.mutex:
            return fn(session, *args)

    def acquire(self, session: str, name: str, timeout: Optional[float] = None) -> None:
        timeout = self.lock_timeout if timeout is None or timeout <= 0 else timeout
        deadline = time.monotonic() + timeout
        with self.cond:
            if self.core.lock_try(session, name):
                return None
            while self.core.lock_holder(name) != session:
                left = deadline - time.monotonic()
                if left <= 0:
                    if self.core.lock_cancel(session, name):
                        raise LockTimeout(f"timed out waiting for lock {name!r}")
                    break
                self.cond.wait(left)
        return None

    def drop_session(self, session: str) -> None:
        """Release every lock ``session`` holds (its connection went away)."""
        with self.cond:
            for name, lk in list(self.core.locks.items()):
                if lk.holder == session:
                    self.core.lock_release(session, name)
                else:
                    self.core.lock_cancel(session, name)
            self.cond.notify_all()

    def transport(self, prefix: str = "c") -> "DirectTransport":
        return DirectTransport(self, self.new_session(prefix))


class DirectTransport(Transport):
    """In-process transport over real threads."""

    def __init__(self, server: ThreadedServer, session: str, latency: float = 0.0):
        self.server = server
        self.session = session
        self.latency = latency
        self._threads: List[threading.Thread] = []
        self.child_errors: List[BaseException] = []

    def call(self, op, *args):
        if self.latency:
            time.sleep(self.latency)
        return self.server.invoke(self.session, op, *args)

    def lock_acquire(self, name, timeout=None):
        if self.latency:
            time.sleep(self.latency)
        return self.server.acquire(self.session, name, timeout)

    def lock_release(self, name):
        return self.call("lock_release", name)

    def transcript_dump(self):
        return self.server.invoke(self.session, "transcript_dump")

    def sleep(self, seconds):
        time.sleep(seconds)

    def now(self):
        return time.monotonic()

    def spawn(self, fn, name, daemon: bool = True):
        child = DirectTransport(self.server, self.server.new_session(name), self.latency)
        child.child_errors = self.child_errors
        child._threads = self._threads

        def body():
            try:
                fn(child)
            except BaseException as exc:  # surfaced by join_children callers
                self.child_errors.append(exc)

        th = threading.Thread(target=body, name=name, daemon=True)
        th.start()
        self._threads.append(th)
        return th

    def join_children(self, timeout: Optional[float] = None) -> None:
        # children share the list, so evictions spawned by evictions are joined too
        while True:
            alive = [th for th in self._threads if th.is_alive()]
            if not alive:
                return
            for th in alive:
                th.join(timeout)
