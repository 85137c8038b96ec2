import random

import pytest
from hypothesis import given, strategies as st

from concur_oram.core import IntegrityError
from concur_oram.crypto import AesGcmSuite, TestSuite, make_suite


@pytest.fixture(params=["aesgcm", "test"])
def suite(request):
    return make_suite(request.param, b"k" * 32, random.Random(1))


@given(st.binary(max_size=300))
def test_roundtrip_both_suites(data):
    for kind in ("aesgcm", "test"):
        s = make_suite(kind, b"some key", random.Random(7))
        env = s.encrypt(data)
        assert len(env) == s.envelope_size(len(data))
        assert s.decrypt(env) == data


def test_encryption_is_randomized(suite):
    assert suite.encrypt(b"same") != suite.encrypt(b"same")


def test_tamper_detected(suite):
    env = bytearray(suite.encrypt(b"payload bytes"))
    for pos in (0, 14, len(env) - 1):
        bad = bytearray(env)
        bad[pos] ^= 1
        with pytest.raises(IntegrityError):
            suite.decrypt(bytes(bad))
    with pytest.raises(IntegrityError):
        suite.decrypt(b"short")


def test_wrong_key_rejected():
    a = make_suite("test", b"a", random.Random(0))
    b = make_suite("test", b"b", random.Random(0))
    with pytest.raises(IntegrityError):
        b.decrypt(a.encrypt(b"x"))


def test_test_suite_replays_with_same_seed():
    a = TestSuite(b"key", random.Random(5))
    b = TestSuite(b"key", random.Random(5))
    assert [a.encrypt(bytes([i])) for i in range(5)] == [b.encrypt(bytes([i])) for i in range(5)]


def test_aes_key_sizes():
    with pytest.raises(ValueError):
        AesGcmSuite(b"short")
    # make_suite derives a proper key from any passphrase
    make_suite("aesgcm", b"short").encrypt(b"")
    with pytest.raises(ValueError):
        make_suite("rot13", b"k")
