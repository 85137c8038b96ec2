"""Bandwidth accounting: per-query block cost and eviction commit cost."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from ..core import OpKind, TranscriptEvent
from ..state import QUERY_LOCK

_PAYLOAD = (OpKind.RegionRead, OpKind.RegionWrite, OpKind.RegionCreate, OpKind.LogAppend, OpKind.LogRead)


def event_bytes(ev: TranscriptEvent) -> int:
    """Bytes crossing the network for one operation (requests and answers;
    server-side copies and swaps move nothing)."""
    if ev.kind in _PAYLOAD:
        return ev.length
    if ev.kind in (OpKind.CounterRead, OpKind.CounterIncr):
        return 8
    return 0


class CommitBytes:
    """Observer: bytes each eviction transfers while holding the query lock,
    which is exactly its commit step."""

    def __init__(self):
        self.inside: Dict[str, int] = {}
        self.totals: List[int] = []

    def __call__(self, ev: TranscriptEvent, core=None) -> None:
        s = ev.session
        if not s.startswith("evict"):
            return
        if ev.kind == OpKind.LockAcquire and ev.region == QUERY_LOCK:
            self.inside[s] = 0
        elif ev.kind == OpKind.LockRelease and ev.region == QUERY_LOCK and s in self.inside:
            self.totals.append(self.inside.pop(s))
        elif s in self.inside:
            self.inside[s] += event_bytes(ev)


@dataclass
class CostFit:
    alpha: float
    beta: float
    points: List[Tuple[int, int, float]]   # (N, c, blocks per query)

    def bound(self, N: int, c: int) -> float:
        return self.alpha * math.log2(N) + self.beta * c

    def slack(self) -> List[float]:
        return [self.bound(N, c) - y for N, c, y in self.points]

    def as_dict(self) -> dict:
        return {"alpha": round(self.alpha, 4), "beta": round(self.beta, 4),
                "points": [{"N": N, "c": c, "blocks_per_query": round(y, 3)} for N, c, y in self.points]}


def fit_cost(points: Sequence[Tuple[int, int, float]]) -> CostFit:
    """Smallest upper envelope ``alpha*log2(N) + beta*c`` over the measured
    points: minimize the summed bound subject to covering every point, with
    alpha, beta >= 0 (a linear program)."""
    if not points:
        raise ValueError("no measurements")
    A = np.array([[math.log2(N), c] for N, c, _ in points], dtype=float)
    y = np.array([v for _, _, v in points], dtype=float)
    res = linprog(c=A.sum(axis=0), A_ub=-A, b_ub=-y, bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"cost fit failed: {res.message}")
    alpha, beta = (float(v) for v in res.x)
    return CostFit(alpha, beta, list(points))


def path_bytes(layout) -> int:
    """Size of one full root-to-leaf path of buckets."""
    return layout.levels * layout.bucket_size
