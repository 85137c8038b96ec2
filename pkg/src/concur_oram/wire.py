"""Binary TCP protocol between clients and the storage server.

Every message is a frame: a 4-byte big-endian length, then that many bytes.
A request frame starts with a one-byte opcode, a response frame with a
one-byte status (0 ok, 1 server error, 2 lock timeout, 3 other error; on
error the rest is a UTF-8 message). Field encodings: names are a u16 length
plus UTF-8, offsets/lengths/counters are u64, byte strings are a u32 length
plus the bytes, timeouts are f64; all big-endian.

====  ===================  ===================================  ==============
op    operation            request body                         response body
====  ===================  ===================================  ==============
0x01  region_read          name, offset, length                 bytes
0x02  region_write         name, offset, bytes                  -
0x03  log_append           name, bytes                          u64 new length
0x04  log_read_all         name                                 u32 n, n bytes
0x05  log_clear            name                                 -
0x06  lock                 u8 (0 acquire, 1 release), name, f64 -
0x07  counter              u8 (0 read, 1 increment), name       u64 value
0x08  server_copy          src, offset, dst, offset, length     -
0x09  ref_swap             name, name                           -
0x0A  region_create        name, bytes                          -
0x0B  region_delete        name                                 -
0x0C  log_delete           name                                 -
0x0D  hello                name (session prefix)                name (session)
0x10  transcript_dump      -                                    JSON bytes
====  ===================  ===================================  ==============

A session lives as long as its connection; locks it still holds when the
connection drops are released.
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import struct
import threading
import time
from typing import Callable, List, Optional, Tuple

from .core import LockTimeout, OramError, ServerError, TranscriptEvent
from .server import ThreadedServer, Transport

FRAME = struct.Struct(">I")
U8, U16, U32, U64, F64 = (struct.Struct(f) for f in (">B", ">H", ">I", ">Q", ">d"))

OP_READ, OP_WRITE, OP_APPEND, OP_LOGREAD, OP_LOGCLEAR = 0x01, 0x02, 0x03, 0x04, 0x05
OP_LOCK, OP_COUNTER, OP_COPY, OP_SWAP = 0x06, 0x07, 0x08, 0x09
OP_CREATE, OP_DELETE, OP_LOGDELETE, OP_HELLO, OP_DUMP = 0x0A, 0x0B, 0x0C, 0x0D, 0x10

ST_OK, ST_SERVER, ST_TIMEOUT, ST_OTHER = 0, 1, 2, 3
MAX_FRAME = 1 << 30

ENV_ADDR = "CONCUR_ORAM_ADDR"
DEFAULT_ADDR = "127.0.0.1:7707"


def parse_addr(addr: Optional[str]) -> Tuple[str, int]:
    addr = addr or os.environ.get(ENV_ADDR) or DEFAULT_ADDR
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


# -- field codecs ------------------------------------------------------------------

class Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def u8(self, v):
        self.parts.append(U8.pack(v)); return self

    def u64(self, v):
        self.parts.append(U64.pack(v)); return self

    def f64(self, v):
        self.parts.append(F64.pack(v)); return self

    def name(self, s: str):
        raw = s.encode()
        self.parts.append(U16.pack(len(raw)) + raw); return self

    def blob(self, b: bytes):
        self.parts.append(U32.pack(len(b)) + bytes(b)); return self

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def _take(self, st: struct.Struct):
        v = st.unpack_from(self.buf, self.pos)[0]
        self.pos += st.size
        return v

    def u8(self):
        return self._take(U8)

    def u64(self):
        return self._take(U64)

    def f64(self):
        return self._take(F64)

    def name(self) -> str:
        n = self._take(U16)
        s = bytes(self.buf[self.pos:self.pos + n]).decode()
        self.pos += n
        return s

    def blob(self) -> bytes:
        n = self._take(U32)
        b = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return b


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(FRAME.pack(len(payload)) + payload)


def recv_frame(sock: socket.socket) -> Optional[bytes]:
    head = _recv_exact(sock, FRAME.size)
    if head is None:
        return None
    n = FRAME.unpack(head)[0]
    if n > MAX_FRAME:
        raise ServerError(f"frame of {n} bytes is too large")
    return _recv_exact(sock, n)


# -- requests ----------------------------------------------------------------------

def encode_request(op: str, *args) -> bytes:
    w = Writer()
    if op == "region_read":
        w.u8(OP_READ).name(args[0]).u64(args[1]).u64(args[2])
    elif op == "region_write":
        w.u8(OP_WRITE).name(args[0]).u64(args[1]).blob(args[2])
    elif op == "log_append":
        w.u8(OP_APPEND).name(args[0]).blob(args[1])
    elif op == "log_read_all":
        w.u8(OP_LOGREAD).name(args[0])
    elif op == "log_clear":
        w.u8(OP_LOGCLEAR).name(args[0])
    elif op == "lock_acquire":
        w.u8(OP_LOCK).u8(0).name(args[0]).f64(args[1] or 0.0)
    elif op == "lock_release":
        w.u8(OP_LOCK).u8(1).name(args[0]).f64(0.0)
    elif op == "counter_read":
        w.u8(OP_COUNTER).u8(0).name(args[0])
    elif op == "counter_increment":
        w.u8(OP_COUNTER).u8(1).name(args[0])
    elif op == "server_copy":
        w.u8(OP_COPY).name(args[0]).u64(args[1]).name(args[2]).u64(args[3]).u64(args[4])
    elif op == "ref_swap":
        w.u8(OP_SWAP).name(args[0]).name(args[1])
    elif op == "region_create":
        w.u8(OP_CREATE).name(args[0]).blob(args[1])
    elif op == "region_delete":
        w.u8(OP_DELETE).name(args[0])
    elif op == "log_delete":
        w.u8(OP_LOGDELETE).name(args[0])
    elif op == "hello":
        w.u8(OP_HELLO).name(args[0])
    elif op == "transcript_dump":
        w.u8(OP_DUMP)
    else:
        raise ValueError(f"no wire encoding for {op!r}")
    return w.bytes()


def decode_request(payload: bytes) -> Tuple[str, tuple]:
    r = Reader(payload)
    code = r.u8()
    if code == OP_READ:
        return "region_read", (r.name(), r.u64(), r.u64())
    if code == OP_WRITE:
        return "region_write", (r.name(), r.u64(), r.blob())
    if code == OP_APPEND:
        return "log_append", (r.name(), r.blob())
    if code == OP_LOGREAD:
        return "log_read_all", (r.name(),)
    if code == OP_LOGCLEAR:
        return "log_clear", (r.name(),)
    if code == OP_LOCK:
        sub, name, timeout = r.u8(), r.name(), r.f64()
        return ("lock_acquire", (name, timeout)) if sub == 0 else ("lock_release", (name,))
    if code == OP_COUNTER:
        sub, name = r.u8(), r.name()
        return ("counter_read" if sub == 0 else "counter_increment"), (name,)
    if code == OP_COPY:
        return "server_copy", (r.name(), r.u64(), r.name(), r.u64(), r.u64())
    if code == OP_SWAP:
        return "ref_swap", (r.name(), r.name())
    if code == OP_CREATE:
        return "region_create", (r.name(), r.blob())
    if code == OP_DELETE:
        return "region_delete", (r.name(),)
    if code == OP_LOGDELETE:
        return "log_delete", (r.name(),)
    if code == OP_HELLO:
        return "hello", (r.name(),)
    if code == OP_DUMP:
        return "transcript_dump", ()
    raise ServerError(f"unknown opcode 0x{code:02x}")


def encode_result(op: str, result) -> bytes:
    w = Writer().u8(ST_OK)
    if op == "region_read":
        w.blob(result)
    elif op in ("log_append", "counter_read", "counter_increment"):
        w.u64(result)
    elif op == "log_read_all":
        w.parts.append(U32.pack(len(result)))
        for e in result:
            w.blob(e)
    elif op == "hello":
        w.name(result)
    elif op == "transcript_dump":
        w.blob(json.dumps([ev.as_dict() for ev in result]).encode())
    return w.bytes()


def decode_result(op: str, payload: bytes):
    r = Reader(payload)
    status = r.u8()
    if status != ST_OK:
        msg = bytes(payload[1:]).decode(errors="replace")
        if status == ST_TIMEOUT:
            raise LockTimeout(msg)
        if status == ST_SERVER:
            raise ServerError(msg)
        raise OramError(msg)
    if op == "region_read":
        return r.blob()
    if op in ("log_append", "counter_read", "counter_increment"):
        return r.u64()
    if op == "log_read_all":
        n = r._take(U32)
        return [r.blob() for _ in range(n)]
    if op == "hello":
        return r.name()
    if op == "transcript_dump":
        return [TranscriptEvent.from_dict(d) for d in json.loads(r.blob())]
    return None


# -- server ------------------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: ThreadedServer = self.server.oram
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        session = srv.new_session("tcp")
        try:
            while True:
                payload = recv_frame(sock)
                if payload is None:
                    return
                try:
                    op, args = decode_request(payload)
                    if op == "hello":
                        session = srv.new_session(args[0] or "tcp")
                        result = session
                    else:
                        result = srv.invoke(session, op, *args)
                    reply = encode_result(op, result)
                except LockTimeout as exc:
                    reply = U8.pack(ST_TIMEOUT) + str(exc).encode()
                except ServerError as exc:
                    reply = U8.pack(ST_SERVER) + str(exc).encode()
                except Exception as exc:  # keep the connection alive
                    reply = U8.pack(ST_OTHER) + f"{type(exc).__name__}: {exc}".encode()
                send_frame(sock, reply)
        except (ConnectionError, OSError):
            return
        finally:
            srv.drop_session(session)


class _TCP(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class TcpServer:
    """TCP front end for a ``ThreadedServer``."""

    def __init__(self, oram: Optional[ThreadedServer] = None, host: str = "127.0.0.1", port: int = 0):
        self.oram = oram or ThreadedServer()
        self._srv = _TCP((host, port), _Handler)
        self._srv.oram = self.oram
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        return self._srv.server_address[:2]

    def start(self) -> "TcpServer":
        self._thread = threading.Thread(target=self._srv.serve_forever, name="oram-tcp", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._srv.serve_forever()

    def stop(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()


# -- client transport --------------------------------------------------------------

class TcpTransport(Transport):
    def __init__(self, host: str, port: int, name: str = "client", connect_timeout: float = 10.0):
        self.host, self.port = host, port
        self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.session = self._rpc("hello", name)
        self._threads: List[threading.Thread] = []
        self.child_errors: List[BaseException] = []

    def _rpc(self, op: str, *args):
        send_frame(self.sock, encode_request(op, *args))
        payload = recv_frame(self.sock)
        if payload is None:
            raise ConnectionError("server closed the connection")
        return decode_result(op, payload)

    def call(self, op, *args):
        return self._rpc(op, *args)

    def lock_acquire(self, name, timeout=None):
        return self._rpc("lock_acquire", name, timeout or 0.0)

    def lock_release(self, name):
        return self._rpc("lock_release", name)

    def transcript_dump(self):
        return self._rpc("transcript_dump")

    def sleep(self, seconds):
        time.sleep(seconds)

    def now(self):
        return time.monotonic()

    def spawn(self, fn: Callable[[Transport], None], name: str, daemon: bool = True):
        errors, threads = self.child_errors, self._threads

        def body():
            child = None
            try:
                child = TcpTransport(self.host, self.port, name)
                child.child_errors, child._threads = errors, threads
                fn(child)
            except BaseException as exc:  # surfaced by join_children callers
                errors.append(exc)
            finally:
                if child is not None:
                    child.close()

        th = threading.Thread(target=body, name=name, daemon=True)
        th.start()
        threads.append(th)
        return th

    def join_children(self, timeout: Optional[float] = None) -> None:
        while True:
            alive = [th for th in self._threads if th.is_alive()]
            if not alive:
                return
            for th in alive:
                th.join(timeout)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def connect(addr: Optional[str] = None, name: str = "client") -> TcpTransport:
    host, port = parse_addr(addr)
    return TcpTransport(host, port, name)
