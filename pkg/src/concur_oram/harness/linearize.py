"""Linearizability checking against a sequential key-value oracle.

Two independent routes:

* ``check_witness`` replays the history in the order of the version stamps
  the protocol assigned and checks values plus real-time order. Fast, but it
  only tests one candidate order.
* ``check_search`` knows nothing about stamps. Registers are a local
  property, so each block id is checked on its own by a depth-first search
  over the operations that may come next (a minimal operation in real time),
  memoised on (done set, current value).

``check_linearizable`` accepts when the witness passes and otherwise runs
the search, so a failing witness never hides a valid order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple


class HistoryEntry(NamedTuple):
    stamp: int
    client: str
    op: str
    id: int
    data: Optional[bytes]
    value: bytes
    start: float
    end: float


class OracleStore:
    """Sequential reference: a plain dict of block payloads."""

    def __init__(self, N: int, B: int, initial: Optional[Sequence[bytes]] = None):
        self.B = B
        self.N = N
        self.cells: Dict[int, bytes] = {}
        if initial is not None:
            for i, v in enumerate(initial):
                self.cells[i] = bytes(v).ljust(B, b"\0")

    def get(self, bid: int) -> bytes:
        return self.cells.get(bid, bytes(self.B))

    def apply(self, op: str, bid: int, data: Optional[bytes]) -> bytes:
        """Returns the value the operation observes (the old value for writes)."""
        if not 0 <= bid < self.N:
            raise KeyError(bid)
        old = self.get(bid)
        if op == "write":
            self.cells[bid] = bytes(data).ljust(self.B, b"\0")
        return old


@dataclass
class Verdict:
    ok: bool
    reason: str = ""
    route: str = ""

    def __bool__(self):
        return self.ok


def _pad(data: Optional[bytes], B: int) -> Optional[bytes]:
    return None if data is None else bytes(data).ljust(B, b"\0")


def check_witness(history: Sequence[HistoryEntry], N: int, B: int,
                  initial: Optional[Sequence[bytes]] = None) -> Verdict:
    order = sorted(history, key=lambda h: h.stamp)
    stamps = [h.stamp for h in order]
    if len(set(stamps)) != len(stamps):
        return Verdict(False, "duplicate stamps", "witness")
    store = OracleStore(N, B, initial)
    for h in order:
        want = store.apply(h.op, h.id, h.data)
        if h.value != want:
            return Verdict(False, f"stamp {h.stamp}: {h.op} of {h.id} returned a stale value", "witness")
    # real time: an operation that finished before another began is ordered first
    by_end = sorted(history, key=lambda h: h.end)
    by_start = sorted(history, key=lambda h: h.start)
    best = -1
    j = 0
    for h in by_start:
        while j < len(by_end) and by_end[j].end < h.start:
            best = max(best, by_end[j].stamp)
            j += 1
        if best > h.stamp:
            return Verdict(False, f"stamp {h.stamp} ordered before an operation that finished earlier", "witness")
    return Verdict(True, "", "witness")


def _search_key(ops: List[HistoryEntry], init: bytes, B: int, budget: int) -> Tuple[Optional[bool], int]:
    n = len(ops)
    full = (1 << n) - 1
    seen = set()
    stack = [(0, init)]
    steps = 0
    while stack:
        done, value = stack.pop()
        if done == full:
            return True, steps
        if (done, value) in seen:
            continue
        seen.add((done, value))
        steps += 1
        if steps > budget:
            return None, steps
        pending = [j for j in range(n) if not done >> j & 1]
        horizon = min(ops[j].end for j in pending)
        for j in pending:
            h = ops[j]
            if h.start > horizon:
                continue  # some pending op finished before this one began
            if h.value != value:
                continue
            nxt = _pad(h.data, B) if h.op == "write" else value
            stack.append((done | 1 << j, nxt))
    return False, steps


def check_search(history: Sequence[HistoryEntry], N: int, B: int,
                 initial: Optional[Sequence[bytes]] = None, budget: int = 200_000) -> Verdict:
    store = OracleStore(N, B, initial)
    by_key: Dict[int, List[HistoryEntry]] = {}
    for h in history:
        by_key.setdefault(h.id, []).append(h)
    for bid, ops in sorted(by_key.items()):
        ok, _ = _search_key(ops, store.get(bid), B, budget)
        if ok is None:
            return Verdict(False, f"search budget exhausted on block {bid}", "search")
        if not ok:
            return Verdict(False, f"no legal order for the {len(ops)} operations on block {bid}", "search")
    return Verdict(True, "", "search")


def check_linearizable(history: Sequence[HistoryEntry], N: int, B: int,
                       initial: Optional[Sequence[bytes]] = None) -> Verdict:
    v = check_witness(history, N, B, initial)
    if v:
        return v
    s = check_search(history, N, B, initial)
    if s:
        return s
    return Verdict(False, f"{v.reason}; {s.reason}", "both")


def history_from_records(records: Iterable[dict]) -> List[HistoryEntry]:
    out = []
    for r in records:
        out.append(HistoryEntry(r["stamp"], r["client"], r["op"], r["id"],
                                bytes.fromhex(r["data"]) if r.get("data") else None,
                                bytes.fromhex(r["value"]), r["start"], r["end"]))
    return out


def history_to_records(history: Iterable[HistoryEntry]) -> List[dict]:
    return [{"stamp": h.stamp, "client": h.client, "op": h.op, "id": h.id,
             "data": h.data.hex() if h.data is not None else None, "value": h.value.hex(),
             "start": h.start, "end": h.end} for h in history]
