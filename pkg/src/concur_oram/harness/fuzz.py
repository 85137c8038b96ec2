"""Randomized concurrent histories.

Each case draws a round length c in {2, 4, 8} (with k = c), up to 16
clients, a short workload over a small id space (so ids collide within
rounds), random latencies, and stalls aimed at eviction lock acquisitions,
which is what makes evictions commit out of order.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from ..crypto import make_suite
from .audit import StructuralMonitor
from .linearize import Verdict, check_linearizable
from .runner import SimConfig, SimResult, run_simulation


@dataclass
class FuzzOutcome:
    seed: int
    config: SimConfig
    verdict: Verdict
    queries: int
    out_of_order: int
    error: Optional[str] = None
    structure: Optional[StructuralMonitor] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.verdict.ok


def fuzz_config(seed: int, mutations: tuple = ()) -> SimConfig:
    rng = random.Random(f"fuzz/{seed}")
    c = rng.choice((2, 4, 8))
    clients = rng.randint(1, 16)
    rounds = rng.randint(2, 3)
    return SimConfig(
        N=rng.choice((16, 32)) if c == 8 else rng.choice((8, 16, 32)), B=8, c=c, k=c, Z=rng.choice((2, 4)),
        max_stash=16, background=rng.random() < 0.85, mutations=tuple(mutations),
        clients=clients, ops=c * rounds + rng.randint(0, c - 1),
        read_fraction=rng.choice((0.2, 0.5, 0.8)),
        distribution=rng.choice(("uniform", "zipf")), theta=1.2,
        seed=seed, rtt=0.001, jitter=rng.choice((0.2, 0.9)),
        stall_prob=rng.choice((0.0, 0.3, 0.6)), stall_factor=rng.choice((50.0, 200.0, 500.0)),
        stall_only="evict" if rng.random() < 0.8 else "",
        stall_ops=("lock_acquire:query_lock",) if rng.random() < 0.7 else (),
        record=False, order_poll=0.002, full_poll=0.005,
    )


def run_case(seed: int, mutations: tuple = (), monitor: bool = False) -> FuzzOutcome:
    """One fuzzed history. With ``monitor`` a ``StructuralMonitor`` watches
    the run and is returned in ``structure``."""
    cfg = fuzz_config(seed, mutations)
    mon = StructuralMonitor(cfg.params(), make_suite(cfg.suite, cfg.key.encode())) if monitor else None
    try:
        res: SimResult = run_simulation(cfg, observers=[mon] if mon else ())
    except Exception as exc:  # a crash is a failed case, reported as such
        return FuzzOutcome(seed, cfg, Verdict(False, "run failed"), 0, 0, f"{type(exc).__name__}: {exc}", mon)
    v = check_linearizable(res.history, cfg.N, cfg.B)
    return FuzzOutcome(seed, cfg, v, len(res.history), res.report["out_of_order_commits"], None, mon)
