"""Acceptance checks, one test per criterion. Each prints one PASS/FAIL line.

Tolerances are pinned here:

1. windows of k (2k) consecutive eviction counters share <= log2 k
   (log2 k + 1) trailing bits, N = 8..4096, every power-of-two k <= N/2,
   every start; zero failures, under 60 s
2. any two of k consecutive eviction paths meet only above level log2 k + 1,
   N <= 64, k <= 8, every start; zero failures
3. 10^4 fuzzed histories (c in {2,4,8}, k = c, <= 16 clients) linearizable;
   zero failures, and out-of-order commits must occur
4. >= 100 equal-schedule pairs with exactly equal shapes; chi-square p > 0.01
   over 10^4 query leaves at N = 64; all 6 mutations detected
5. no structural violation in any fuzz run nor in a 10^5-op run at
   N = 1024, Z = 4, S = c = 8 (MaxStash 96)
6. blocks per query <= alpha*log2 N + beta*c for points not used in the fit;
   commit bytes < one path of buckets at B = 4096
7. 5 ms round trips: throughput(8 clients) > 3 x throughput(1 client);
   background p99 < blocking p99; under 10 minutes
"""

import os
import random
import time

import pytest

from concur_oram.core import MUTATIONS
from concur_oram.crypto import make_suite
from concur_oram.datatree import reverse_lex_path, shared_levels
from concur_oram.harness.audit import StructuralMonitor
from concur_oram.harness.combinatorics import (check_est_containment_exhaustive, check_windows,
                                               check_windows_direct)
from concur_oram.harness.cost import CommitBytes, fit_cost, path_bytes
from concur_oram.harness.fuzz import run_case
from concur_oram.harness.runner import SimConfig, run_simulation
from concur_oram.harness.shape import LeafRecorder, leaf_uniformity
from concur_oram.harness.verify import _tools, colliding_plan, mutation_drill, shape_pair

FUZZ_CASES = int(os.environ.get("CONCUR_ORAM_FUZZ_CASES", 10_000))


@pytest.fixture
def verdict(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{name}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def campaign():
    """The fuzz campaign shared by the correctness and structure checks."""
    t0 = time.monotonic()
    outcomes = [run_case(seed, monitor=True) for seed in range(FUZZ_CASES)]
    return outcomes, time.monotonic() - t0


def test_ac1_combinatorics(verdict):
    t0 = time.monotonic()
    rep = check_windows(tuple(2 ** e for e in range(3, 13)))
    # second route on small N: pairwise over the actual eviction leaves
    direct = [check_windows_direct(N, k) for N in (8, 16, 32, 64, 128)
              for k in (2 ** e for e in range(N.bit_length() - 1))]
    dt = time.monotonic() - t0
    bad = rep.failures + [f for d in direct for f in d.failures]
    verdict("AC1 combinatorics", not bad and dt < 60.0,
            f"{rep.checked} windows (N=8..4096) + {sum(d.checked for d in direct)} direct, "
            f"{len(bad)} failures, {dt:.1f}s")


def test_ac2_est_containment(verdict):
    rep = check_est_containment_exhaustive(64, 8)
    # second route: level count from the leaves' common prefix
    other = 0
    for N in (4, 8, 16, 32, 64):
        for k in (1, 2, 4, 8):
            if k > N // 2:
                continue
            for s in range(N):
                leaves = [reverse_lex_path(s + j, N) for j in range(k)]
                other += sum(shared_levels(a, b, N) > k.bit_length()
                             for i, a in enumerate(leaves) for b in leaves[i + 1:])
    verdict("AC2 EST containment", rep.ok and other == 0,
            f"{rep.checked} path pairs, {len(rep.failures)} + {other} failures")


def test_ac3_linearizability(campaign, verdict):
    outcomes, dt = campaign
    bad = [o for o in outcomes if not o.ok]
    ooo = sum(o.out_of_order for o in outcomes)
    cs = sorted({o.config.c for o in outcomes})
    assert all(o.config.k == o.config.c and o.config.clients <= 16 for o in outcomes)
    detail = (f"{len(outcomes)} histories, c in {cs}, {sum(o.queries for o in outcomes)} queries, "
              f"{ooo} out-of-order commits, {len(bad)} failures, {dt:.0f}s")
    if bad:
        detail += f"; first: seed {bad[0].seed} {bad[0].error or bad[0].verdict.reason}"
    verdict("AC3 linearizability", not bad and ooo > 0 and cs == [2, 4, 8], detail)


def _pair_config(i: int) -> SimConfig:
    rng = random.Random(f"pair/{i}")
    c = rng.choice((2, 4, 8))
    N = rng.choice((16, 32, 64)) if c < 8 else rng.choice((32, 64))
    return SimConfig(N=N, B=8, c=c, k=c, Z=rng.choice((2, 4)), clients=rng.randint(1, 8),
                     ops=c * rng.randint(2, 4) + rng.randint(0, c - 1), seed=i,
                     background=rng.random() < 0.8, stall_prob=rng.choice((0.0, 0.4)), stall_factor=300.0,
                     stall_only="evict", stall_ops=("lock_acquire:query_lock",),
                     order_poll=0.002, full_poll=0.005)


def test_ac4_obliviousness(verdict):
    pairs = 200
    unequal = []
    for i in range(pairs):
        cfg = _pair_config(i)
        # odd pairs: the second run hammers a few hot blocks
        plan_b = colliding_plan(cfg.workload().per_client(), cfg.N, cfg.B, i) if i % 2 else None
        out = shape_pair(cfg, plan_b)
        if not out.equal:
            unequal.append((i, out.first_diff, out.errors[:1]))
    pvals = []
    for dist in ("uniform", "zipf"):
        cfg = SimConfig(N=64, B=8, c=4, k=4, clients=4, ops=10_000, record=False, seed=0,
                        distribution=dist, theta=1.2, order_poll=0.002, full_poll=0.005)
        rec = LeafRecorder(_tools(cfg)[2])
        run_simulation(cfg, observers=[rec])
        assert len(rec.leaves) == 10_000
        pvals.append(leaf_uniformity(rec.leaves, 64)[1])
    drills = [mutation_drill(m) for m in sorted(MUTATIONS)]
    missed = [d["mutation"] for d in drills if not d["detected"]]
    ok = not unequal and min(pvals) > 0.01 and not missed and len(drills) == 6
    verdict("AC4 obliviousness", ok,
            f"{pairs - len(unequal)}/{pairs} shape pairs equal; leaf chi-square p = "
            f"{pvals[0]:.3f} (uniform ids), {pvals[1]:.3f} (zipf ids); "
            f"{len(drills) - len(missed)}/6 mutations detected" + (f", missed {missed}" if missed else ""))


def test_ac5_structural_bounds(campaign, verdict):
    outcomes, _ = campaign
    fuzz_bad = [v for o in outcomes for v in o.structure.report.violations]
    cfg = SimConfig(N=1024, B=16, c=8, k=8, Z=4, S=8, max_stash=96, clients=8, ops=100_000, record=False,
                    seed=1, stall_prob=0.3, stall_factor=200.0, stall_only="evict",
                    stall_ops=("lock_acquire:query_lock",))
    mon = StructuralMonitor(cfg.params(), make_suite(cfg.suite, cfg.key.encode()))
    t0 = time.monotonic()
    try:
        run_simulation(cfg, observers=[mon])
        err = None
    except Exception as exc:  # an overflow raises StashOverflow
        err = f"{type(exc).__name__}: {exc}"
    pk = mon.peaks
    ok = not fuzz_bad and err is None and mon.report.ok and pk["stash"] <= 96 and pk["drl"] <= 8 \
        and pk["query_log"] <= 8 and pk["drlogset"] <= 8 and pk["stashset"] <= 8
    detail = (f"{len(outcomes)} fuzz runs with {len(fuzz_bad)} violations; 10^5 ops at N=1024: "
              f"peaks drl={pk.get('drl')} query_log={pk.get('query_log')} drlogset={pk.get('drlogset')} "
              f"stashset={pk.get('stashset')} stash={pk.get('stash')}/96, "
              f"{len(mon.report.violations)} violations, {time.monotonic() - t0:.0f}s")
    if err or fuzz_bad or mon.report.violations:
        detail += f"; first: {err or (fuzz_bad + mon.report.violations)[0]}"
    verdict("AC5 structural bounds", ok, detail)


def test_ac6_cost(verdict):
    pts = []
    for N in (64, 128, 256, 512, 1024):
        for c in (2, 4, 8):
            cfg = SimConfig(N=N, B=512, c=c, k=c, clients=2, ops=c * 6, record=False, seed=N + c)
            pts.append((N, c, run_simulation(cfg).report["blocks_per_query"]))
    fit = fit_cost([p for p in pts if p[0] in (64, 256, 1024)])
    held = [(N, c, y, fit.bound(N, c)) for N, c, y in pts if N in (128, 512)]
    over = [h for h in held if h[2] > h[3]]
    cfg = SimConfig(N=256, B=4096, c=8, k=8, clients=4, ops=64, record=False, seed=1)
    cb = CommitBytes()
    run_simulation(cfg, observers=[cb])
    path = path_bytes(_tools(cfg)[2])
    ok = not over and cb.totals and max(cb.totals) < path
    verdict("AC6 cost", bool(ok),
            f"alpha={fit.alpha:.2f} beta={fit.beta:.2f}; blocks/query {min(p[2] for p in pts):.0f}.."
            f"{max(p[2] for p in pts):.0f}; {len(held) - len(over)}/{len(held)} held-out points under the bound; "
            f"commit max {max(cb.totals)} B < path {path} B over {len(cb.totals)} commits")


def test_ac7_scaling(verdict):
    t0 = time.monotonic()
    base = SimConfig(N=1024, B=64, c=8, k=8, Z=4, rtt=0.005, jitter=0.2, ops=480, record=False, seed=0)
    one = run_simulation(base.replace(clients=1)).report
    bg = run_simulation(base.replace(clients=8)).report
    blk = run_simulation(base.replace(clients=8, background=False)).report
    ratio = bg["throughput_ops_s"] / one["throughput_ops_s"]
    dt = time.monotonic() - t0
    ok = ratio > 3.0 and bg["latency_ms"]["p99"] < blk["latency_ms"]["p99"] and dt < 600
    verdict("AC7 scaling", ok,
            f"throughput 1 client {one['throughput_ops_s']:.2f} ops/s, 8 clients {bg['throughput_ops_s']:.2f} "
            f"ops/s ({ratio:.2f}x); p99 background {bg['latency_ms']['p99']:.0f} ms vs blocking "
            f"{blk['latency_ms']['p99']:.0f} ms; {dt:.0f}s")
