"""Shared client context and the public directory region.

The directory is a fixed-size cleartext region holding the protocol's public
bookkeeping: round number, which bigentry logs and temporary stashes are
live, the committed eviction ids, per-bucket publish stamps for the eviction
subtree, and regions waiting to be deleted. Everything in it is already
visible to the server from the shape of the accesses, so it is not encrypted.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .core import OramParams
from .crypto import CipherSuite
from .datatree import TreeLayout

DIRECTORY = "directory"
CONFIG = "config"
QUERY_LOCK = "query_lock"
EVICTION_LOCK = "eviction_lock"
PROCESSING_LOCK = "processing_lock"

DIR_SIZE = 8192
_LEN = struct.Struct(">I")


@dataclass
class Directory:
    round: int = 0
    open: bool = True
    logs: List[int] = field(default_factory=list)          # live bigentry logs, ascending
    stashes: List[int] = field(default_factory=list)       # resident temp stashes, ascending
    snap_logs: List[int] = field(default_factory=list)     # logs live when the round opened
    snap_stashes: List[int] = field(default_factory=list)
    main: int = 0                                          # temp stash copied into stash_main
    committed: List[int] = field(default_factory=list)     # committed ids above ``main``
    published: int = 0                                     # evictions whose tree writes are in data_tree
    est_stamp: Dict[str, int] = field(default_factory=dict)
    trash: List[str] = field(default_factory=list)         # regions/logs to drop at round end

    def encode(self) -> bytes:
        body = json.dumps(self.__dict__, separators=(",", ":"), sort_keys=True).encode()
        if len(body) + _LEN.size > DIR_SIZE:
            raise ValueError("directory does not fit its region")
        return _LEN.pack(len(body)) + body + bytes(DIR_SIZE - _LEN.size - len(body))

    @classmethod
    def decode(cls, raw: bytes) -> "Directory":
        n = _LEN.unpack_from(raw)[0]
        return cls(**json.loads(raw[_LEN.size:_LEN.size + n]))

    def commit_set(self) -> List[int]:
        return [self.main] + list(self.committed)


def read_directory(tr) -> Directory:
    return Directory.decode(tr.region_read(DIRECTORY, 0, DIR_SIZE))


def write_directory(tr, d: Directory) -> None:
    tr.region_write(DIRECTORY, 0, d.encode())


def params_to_json(p: OramParams) -> bytes:
    d = {k: getattr(p, k) for k in ("N", "B", "c", "k", "Z", "S", "max_stash", "lock_timeout",
                                      "order_poll", "full_poll", "background")}
    d["mutations"] = sorted(p.mutations)
    return json.dumps(d, sort_keys=True).encode()


def params_from_json(raw: bytes) -> OramParams:
    d = json.loads(raw)
    d["mutations"] = frozenset(d.get("mutations", ()))
    return OramParams(**d)


class Ctx:
    """Everything one agent needs to talk the protocol: parameters, cipher,
    a transport and its private randomness."""

    def __init__(self, params: OramParams, suite: CipherSuite, tr, rng: Optional[random.Random] = None,
                 metrics=None):
        self.p = params
        self.suite = suite
        self.tr = tr
        self.rng = rng or random.Random()
        self.layout = TreeLayout(params, suite)
        self.metrics = metrics

    def with_transport(self, tr, rng: Optional[random.Random] = None) -> "Ctx":
        return Ctx(self.p, self.suite, tr, rng or random.Random(self.rng.getrandbits(64)), self.metrics)

    def note(self, key: str, value) -> None:
        if self.metrics is not None:
            self.metrics.note(key, value)
