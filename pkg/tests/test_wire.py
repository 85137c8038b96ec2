import socket
import struct

import pytest
from hypothesis import given, strategies as st

from concur_oram.core import LockTimeout, OpKind, ServerError
from concur_oram.server import ThreadedServer
from concur_oram.wire import (TcpServer, TcpTransport, decode_request, decode_result, encode_request,
                              encode_result, parse_addr, recv_frame, send_frame)

names = st.text(min_size=1, max_size=20)
u64 = st.integers(0, 2 ** 63)


@given(names, u64, u64, st.binary(max_size=64))
def test_request_roundtrip(name, a, b, blob):
    cases = [
        ("region_read", (name, a, b)), ("region_write", (name, a, blob)),
        ("log_append", (name, blob)), ("log_read_all", (name,)), ("log_clear", (name,)),
        ("lock_acquire", (name, 1.5)), ("lock_release", (name,)),
        ("counter_read", (name,)), ("counter_increment", (name,)),
        ("server_copy", (name, a, name + "x", b, a)), ("ref_swap", (name, name + "y")),
        ("region_create", (name, blob)), ("region_delete", (name,)), ("log_delete", (name,)),
        ("hello", (name,)), ("transcript_dump", ()),
    ]
    for op, args in cases:
        assert decode_request(encode_request(op, *args)) == (op, args)


def test_opcodes_are_fixed():
    assert encode_request("region_read", "r", 1, 2)[0] == 0x01
    assert encode_request("hello", "c")[0] == 0x0D
    assert encode_request("transcript_dump")[0] == 0x10
    with pytest.raises(ServerError):
        decode_request(b"\x7f")


@given(st.lists(st.binary(max_size=30), max_size=5), u64)
def test_result_roundtrip(entries, v):
    assert decode_result("log_read_all", encode_result("log_read_all", entries)) == entries
    assert decode_result("counter_read", encode_result("counter_read", v)) == v
    assert decode_result("region_write", encode_result("region_write", None)) is None


def test_error_statuses():
    with pytest.raises(LockTimeout):
        decode_result("lock_acquire", b"\x02timed out")
    with pytest.raises(ServerError):
        decode_result("region_read", b"\x01no such region")


def test_parse_addr(monkeypatch):
    monkeypatch.delenv("CONCUR_ORAM_ADDR", raising=False)
    assert parse_addr(None) == ("127.0.0.1", 7707)
    assert parse_addr("example:99") == ("example", 99)
    monkeypatch.setenv("CONCUR_ORAM_ADDR", "10.0.0.1:1234")
    assert parse_addr(None) == ("10.0.0.1", 1234)


@pytest.fixture
def tcp():
    srv = TcpServer(ThreadedServer(), "127.0.0.1", 0).start()
    yield srv
    srv.stop()


def test_tcp_operations(tcp):
    host, port = tcp.address
    tr = TcpTransport(host, port, "client")
    tr.region_create("r", b"hello world")
    assert tr.region_read("r", 6, 5) == b"world"
    assert tr.log_append("l", b"x") == 1
    assert tr.log_read_all("l") == [b"x"]
    assert tr.counter_increment("c") == 1
    with pytest.raises(ServerError):
        tr.region_read("nope", 0, 1)
    tr.lock_acquire("L", 1.0)
    other = TcpTransport(host, port, "client")
    with pytest.raises(LockTimeout):
        other.lock_acquire("L", 0.1)
    tr.close()  # disconnect releases the lock
    other.lock_acquire("L", 2.0)
    events = other.transcript_dump()
    assert any(e.kind == OpKind.RegionCreate and e.session.startswith("client") for e in events)
    other.close()


def test_raw_framing(tcp):
    with socket.create_connection(tcp.address) as s:
        send_frame(s, encode_request("hello", "raw"))
        session = decode_result("hello", recv_frame(s))
        assert session.startswith("raw")
        send_frame(s, encode_request("counter_increment", "n"))
        frame = recv_frame(s)
        assert frame[0] == 0 and struct.unpack(">Q", frame[1:])[0] == 1
