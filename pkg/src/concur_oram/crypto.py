"""Randomized authenticated encryption of fixed-size records.

Two suites share one interface: ``AesGcmSuite`` for real use and
``TestSuite``, a keyed-BLAKE2 stream cipher whose nonces come from an
injected RNG so that whole protocol runs replay bit for bit.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import random
import threading
from typing import Callable, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .core import IntegrityError

NONCE_SIZE = 12
TAG_SIZE = 16


class CipherSuite:
    """Encrypt/decrypt with a key shared by all clients."""

    overhead = NONCE_SIZE + TAG_SIZE

    def envelope_size(self, plain_size: int) -> int:
        return plain_size + self.overhead

    def encrypt(self, plain: bytes) -> bytes:
        raise NotImplementedError

    def decrypt(self, env: bytes) -> bytes:
        raise NotImplementedError


class AesGcmSuite(CipherSuite):
    def __init__(self, key: bytes, nonce_source: Optional[Callable[[int], bytes]] = None):
        if len(key) not in (16, 24, 32):
            raise ValueError("AES key must be 16, 24 or 32 bytes")
        self._aead = AESGCM(key)
        self._nonce = nonce_source or os.urandom

    def encrypt(self, plain: bytes) -> bytes:
        nonce = self._nonce(NONCE_SIZE)
        return nonce + self._aead.encrypt(nonce, bytes(plain), None)

    def decrypt(self, env: bytes) -> bytes:
        if len(env) < self.overhead:
            raise IntegrityError("envelope too short")
        nonce, body = bytes(env[:NONCE_SIZE]), bytes(env[NONCE_SIZE:])
        try:
            return self._aead.decrypt(nonce, body, None)
        except InvalidTag as exc:
            raise IntegrityError("authentication failed") from exc


def _keystream(base, nonce: bytes, n: int) -> bytes:
    """Keyed BLAKE2b in counter mode; ``base`` is a keyed hasher to copy."""
    out = bytearray()
    ctr = 0
    while len(out) < n:
        h = base.copy()
        h.update(nonce + ctr.to_bytes(4, "big"))
        out += h.digest()
        ctr += 1
    return bytes(out[:n])


class TestSuite(CipherSuite):
    """Deterministic cipher for replayable runs.

    Nonces are drawn from ``rng``; ciphertext is plaintext XOR a keyed
    BLAKE2b stream, followed by a keyed BLAKE2b tag over nonce+ciphertext.
    """

    __test__ = False  # not a pytest class

    def __init__(self, key: bytes, rng: Optional[random.Random] = None):
        self._stream = hashlib.blake2b(key=hashlib.blake2b(key, digest_size=32).digest(), digest_size=64)
        self._mac = hashlib.blake2b(key=hashlib.blake2b(b"mac" + key, digest_size=32).digest(),
                                    digest_size=TAG_SIZE)
        self._rng = rng or random.Random(0)
        self._lock = threading.Lock()

    def _next_nonce(self) -> bytes:
        with self._lock:
            return self._rng.getrandbits(NONCE_SIZE * 8).to_bytes(NONCE_SIZE, "big")

    def encrypt(self, plain: bytes) -> bytes:
        nonce = self._next_nonce()
        stream = _keystream(self._stream, nonce, len(plain))
        body = (int.from_bytes(plain, "big") ^ int.from_bytes(stream, "big")).to_bytes(len(plain), "big")
        return nonce + body + self._tag(nonce + body)

    def _tag(self, data: bytes) -> bytes:
        h = self._mac.copy()
        h.update(data)
        return h.digest()

    def decrypt(self, env: bytes) -> bytes:
        env = bytes(env)
        if len(env) < self.overhead:
            raise IntegrityError("envelope too short")
        nonce, body, tag = env[:NONCE_SIZE], env[NONCE_SIZE:-TAG_SIZE], env[-TAG_SIZE:]
        if not hmac.compare_digest(tag, self._tag(nonce + body)):
            raise IntegrityError("authentication failed")
        stream = _keystream(self._stream, nonce, len(body))
        return (int.from_bytes(body, "big") ^ int.from_bytes(stream, "big")).to_bytes(len(body), "big")


def make_suite(kind: str, key: bytes, rng: Optional[random.Random] = None) -> CipherSuite:
    if kind == "aesgcm":
        if len(key) not in (16, 24, 32):
            key = hashlib.sha256(key).digest()
        if rng is None:
            return AesGcmSuite(key)
        return AesGcmSuite(key, lambda n: rng.getrandbits(8 * n).to_bytes(n, "big"))
    if kind == "test":
        return TestSuite(key, rng)
    raise ValueError(f"unknown cipher suite {kind!r}")
