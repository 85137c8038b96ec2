"""Domain types shared by every module: identifiers, blocks, parameters and
transcript events."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import FrozenSet, NamedTuple, Optional


class OramError(Exception):
    """Base class for protocol errors."""


class IntegrityError(OramError):
    """An envelope failed authentication or had the wrong format."""


class ServerError(OramError):
    """The server rejected an operation (unknown name, range error...)."""


class LockTimeout(OramError):
    pass


class StashOverflow(OramError):
    """More real blocks are left over after an eviction than a stash can hold."""


class InvariantBreach(OramError):
    """A structural invariant of the protocol did not hold."""


MUTATIONS = frozenset(
    {
        "skip_dummy_read",
        "reuse_dummy_slot",
        "skip_index_removal",
        "skip_order_sync",
        "commit_without_lock",
        "wrong_est_height",
    }
)


def _log2(n: int) -> int:
    return n.bit_length() - 1


@dataclass(frozen=True)
class OramParams:
    """Static configuration shared by every client of one ORAM instance.

    :param N: number of logical blocks; also the number of tree leaves
    :param B: payload bytes per block
    :param c: query round length
    :param k: maximum number of evictions in flight
    :param Z: real-capable slots per bucket
    :param S: dummy slots per bucket (defaults to c)
    :param max_stash: real-capable slots of a temporary stash
    """

    N: int = 1024
    B: int = 4096
    c: int = 8
    k: int = 8
    Z: int = 4
    S: Optional[int] = None
    max_stash: int = 64
    lock_timeout: float = 30.0
    order_poll: float = 0.010
    full_poll: float = 0.050
    background: bool = True
    mutations: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.S is None:
            object.__setattr__(self, "S", self.c)
        object.__setattr__(self, "mutations", frozenset(self.mutations))
        self.validate()

    def validate(self) -> None:
        N, k, c = self.N, self.k, self.c
        if N < 4 or N & (N - 1):
            raise ValueError(f"N must be a power of two >= 4, got {N}")
        if k < 1 or k & (k - 1) or k > N // 2:
            raise ValueError(f"k must be a power of two in [1, N/2], got {k}")
        if c < 1:
            raise ValueError("round length c must be >= 1")
        if k > c:
            # each round reshuffles at most c temporary stashes
            raise ValueError("k must not exceed c")
        if self.Z < 1 or self.S < 1 or self.B < 1 or self.max_stash < 1:
            raise ValueError("Z, S, B and max_stash must be positive")
        unknown = self.mutations - MUTATIONS
        if unknown:
            raise ValueError(f"unknown mutations {sorted(unknown)}")

    @property
    def depth(self) -> int:
        return _log2(self.N)

    @property
    def levels(self) -> int:
        return self.depth + 1

    @property
    def est_height(self) -> int:
        h = _log2(self.k) + 1
        if "wrong_est_height" in self.mutations:
            h -= 1
        return max(0, min(h, self.levels))

    @property
    def slots(self) -> int:
        return self.Z + self.S

    def mutated(self, name: str) -> bool:
        return name in self.mutations


def make_dummy_id(ordinal: int, N: int) -> int:
    """BlockId of the dummy numbered ``ordinal``; dummies live above N."""
    if ordinal < 0:
        raise ValueError("ordinal must be non-negative")
    return N + ordinal


def is_real(block_id: int, N: int) -> bool:
    return 0 <= block_id < N


def dummy_ordinal(block_id: int, N: int) -> int:
    return block_id - N


HEADER = struct.Struct(">QIQ")


class Block(NamedTuple):
    """Plaintext block: id, assigned leaf, version stamp and payload.

    The stamp is the global sequence number of the query that produced this
    version (0 for the initial contents); larger means newer.
    """

    id: int
    leaf: int
    stamp: int
    data: bytes

    def pack(self, B: int) -> bytes:
        if len(self.data) != B:
            raise ValueError(f"payload must be {B} bytes, got {len(self.data)}")
        return HEADER.pack(self.id, self.leaf, self.stamp) + self.data

    @classmethod
    def unpack(cls, raw: bytes) -> "Block":
        bid, leaf, stamp = HEADER.unpack_from(raw)
        return cls(bid, leaf, stamp, bytes(raw[HEADER.size:]))

    @classmethod
    def filler(cls, block_id: int, B: int) -> "Block":
        return cls(block_id, 0, 0, bytes(B))


def block_plain_size(B: int) -> int:
    return HEADER.size + B


class OpKind(str, enum.Enum):
    RegionRead = "RegionRead"
    RegionWrite = "RegionWrite"
    LogAppend = "LogAppend"
    LogRead = "LogRead"
    LockAcquire = "LockAcquire"
    LockRelease = "LockRelease"
    CounterRead = "CounterRead"
    CounterIncr = "CounterIncr"
    ServerCopy = "ServerCopy"
    RefSwap = "RefSwap"
    # region lifecycle, needed because logs and stashes come and go
    RegionCreate = "RegionCreate"
    RegionDelete = "RegionDelete"
    LogClear = "LogClear"


@dataclass(frozen=True)
class TranscriptEvent:
    """One physical server access as the server observes it.

    ``value`` carries results the server computes itself (counter values,
    log lengths); it never holds payload bytes.
    """

    seq: int
    kind: OpKind
    region: str
    offset: int
    length: int
    session: str = ""
    value: int = 0
    target: str = ""
    time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "region": self.region,
            "offset": self.offset,
            "length": self.length,
            "session": self.session,
            "value": self.value,
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptEvent":
        return cls(
            d["seq"], OpKind(d["kind"]), d["region"], d["offset"], d["length"],
            d.get("session", ""), d.get("value", 0), d.get("target", ""),
        )
