"""One-call verification of a configuration: correctness, access-shape
independence, and the audits. Also runs the mutation drills."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from ..crypto import make_suite
from ..posmap import PositionMap
from ..state import Ctx
from .audit import StashReadAudit, StructuralMonitor, audit_transcript
from .linearize import check_linearizable
from .runner import SimConfig, SimResult, run_simulation
from .shape import FreshnessTracker, ShapeCanon, first_difference
from .workload import Op


def alternate_plan(plan: List[List[Op]], N: int, B: int, seed) -> List[List[Op]]:
    """Same per-client operation counts, fresh ids, kinds and payloads."""
    rng = random.Random(f"alt/{seed}")
    out = []
    for ops in plan:
        row = []
        for _ in ops:
            bid = rng.randrange(N)
            row.append(("read", bid, None) if rng.random() < 0.5 else ("write", bid, rng.randbytes(B)))
        out.append(row)
    return out


def colliding_plan(plan: List[List[Op]], N: int, B: int, seed, hot: int = 3) -> List[List[Op]]:
    """Same counts, ids drawn from a few hot blocks (duplicates within rounds,
    repeated hits in logs and stashes)."""
    rng = random.Random(f"hot/{seed}")
    ids = rng.sample(range(N), min(hot, N))
    return [[("write", rng.choice(ids), rng.randbytes(B)) if rng.random() < 0.5 else ("read", rng.choice(ids), None)
             for _ in ops] for ops in plan]


@dataclass
class Checked:
    result: Optional[SimResult]
    linearizable: bool
    violations: List[str] = field(default_factory=list)
    error: Optional[str] = None
    stash_checks: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None and self.linearizable and not self.violations


def _tools(cfg: SimConfig):
    p = cfg.params()
    suite = make_suite(cfg.suite, cfg.key.encode())
    layout = Ctx(p, suite, None).layout
    return p, suite, layout


def checked_run(cfg: SimConfig, plan: Optional[List[List[Op]]] = None) -> Checked:
    """Run with every audit attached. Crashes are reported, not raised."""
    p, suite, layout = _tools(cfg)
    mon = StructuralMonitor(p, suite)
    fresh = FreshnessTracker(layout, layout.block_env)
    stash = StashReadAudit()
    try:
        res = run_simulation(cfg.replace(record=True), plan, observers=[mon, fresh, stash])
    except Exception as exc:
        return Checked(None, False, [], f"{type(exc).__name__}: {exc}")
    lin = check_linearizable(res.history, cfg.N, cfg.B)
    violations = list(audit_transcript(res.transcript, p, layout).violations)
    violations += mon.report.violations + fresh.violations[:20] + stash.report.violations
    if not lin:
        violations.append(f"not linearizable: {lin.reason}")
    return Checked(res, lin.ok, violations, None, stash.checked)


def shape_of(cfg: SimConfig, res: SimResult) -> list:
    p, suite, layout = _tools(cfg)
    canon = ShapeCanon(layout, PositionMap(p.N, p.c, suite).region_size)
    return canon.shape(res.transcript)


@dataclass
class PairOutcome:
    equal: bool
    first_diff: Optional[int]
    events: int
    errors: List[str] = field(default_factory=list)


def shape_pair(cfg: SimConfig, plan_b: Optional[List[List[Op]]] = None) -> PairOutcome:
    """Run the configured workload and a second one with the same schedule
    and seeds but different blocks and operations; compare shapes."""
    cfg = cfg.replace(record=True)
    plan_a = cfg.workload().per_client()
    plan_b = plan_b or alternate_plan(plan_a, cfg.N, cfg.B, cfg.seed)
    errors = []
    shapes = []
    for plan in (plan_a, plan_b):
        try:
            res = run_simulation(cfg, plan)
            shapes.append(shape_of(cfg, res))
        except Exception as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
            shapes.append(None)
    if errors:
        return PairOutcome(False, 0, 0, errors)
    d = first_difference(shapes[0], shapes[1])
    return PairOutcome(d is None, d, len(shapes[0]))


def mutation_drill(name: str, seeds: Sequence[int] = (0, 1, 2)) -> Dict[str, object]:
    """Run a mutated protocol in conditions that exercise it (several
    clients, colliding ids, evictions stalled so they commit out of order)
    and report every check that caught it."""
    caught: List[str] = []
    for seed in seeds:
        cfg = SimConfig(N=64, B=16, c=4, k=4, clients=8, ops=96, seed=seed, mutations=(name,),
                        stall_prob=0.4, stall_factor=400.0, stall_only="evict",
                        stall_ops=("lock_acquire:query_lock",), order_poll=0.001, full_poll=0.002)
        plan = cfg.workload().per_client()
        for label, pl in (("uniform", plan), ("hot", colliding_plan(plan, cfg.N, cfg.B, seed))):
            chk = checked_run(cfg, pl)
            if chk.error:
                caught.append(f"{label}/{seed}: run failed: {chk.error}")
            caught += [f"{label}/{seed}: {v}" for v in chk.violations[:3]]
        pair = shape_pair(cfg, colliding_plan(plan, cfg.N, cfg.B, seed))
        if not pair.equal:
            caught.append(f"shape/{seed}: access shapes differ at event {pair.first_diff}")
        if caught:
            break
    return {"mutation": name, "detected": bool(caught), "evidence": caught[:5]}
