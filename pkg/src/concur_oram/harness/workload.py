"""Reproducible multi-client workloads."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

Op = Tuple[str, int, Optional[bytes]]


@dataclass
class Workload:
    """``distribution`` is "uniform", "zipf" (exponent ``theta``) or "trace"
    (ids taken round robin from ``trace``)."""

    N: int
    clients: int = 2
    ops: int = 100
    read_fraction: float = 0.5
    distribution: str = "uniform"
    theta: float = 0.99
    trace: Optional[Sequence[int]] = None
    seed: int = 0
    B: int = 32

    def _ids(self, rng: np.random.Generator, n: int) -> List[int]:
        if self.distribution == "uniform":
            return [int(x) for x in rng.integers(0, self.N, n)]
        if self.distribution == "zipf":
            ranks = np.arange(1, self.N + 1, dtype=float)
            w = ranks ** -self.theta
            return [int(x) for x in rng.choice(self.N, size=n, p=w / w.sum())]
        if self.distribution == "trace":
            if not self.trace:
                raise ValueError("trace workload needs a trace")
            return [int(self.trace[j % len(self.trace)]) % self.N for j in range(n)]
        raise ValueError(f"unknown distribution {self.distribution!r}")

    def per_client(self) -> List[List[Op]]:
        """Split ``ops`` over the clients; client j gets a contiguous share."""
        if self.clients < 1:
            raise ValueError("need at least one client")
        rng = np.random.default_rng(self.seed)
        prng = random.Random(self.seed)
        ids = self._ids(rng, self.ops)
        kinds = rng.random(self.ops) < self.read_fraction
        ops: List[Op] = []
        for bid, is_read in zip(ids, kinds):
            ops.append(("read", bid, None) if is_read else ("write", bid, prng.randbytes(self.B)))
        base, extra = divmod(self.ops, self.clients)
        out, pos = [], 0
        for j in range(self.clients):
            n = base + (1 if j < extra else 0)
            out.append(ops[pos:pos + n])
            pos += n
        return out


def with_ids(plan: List[List[Op]], ids: Sequence[int]) -> List[List[Op]]:
    """Same schedule with the block ids replaced (in plan order)."""
    it = iter(ids)
    return [[(op, next(it), data) for op, _, data in ops] for ops in plan]
