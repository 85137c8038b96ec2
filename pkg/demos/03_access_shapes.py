"""What the server learns: compare the access shapes of two different
workloads run under the same schedule and randomness.

Run A is a uniform workload. Run B hammers three hot blocks, so the same ids
repeat inside rounds, in the log set and in the temporary stashes. Slot
positions that are random by design are folded into classes. Everything
else (operation kinds, regions, lengths, order) must match event for event.

    python demos/03_access_shapes.py
"""

from concur_oram.harness.runner import SimConfig
from concur_oram.harness.verify import colliding_plan, shape_pair

for seed in range(5):
    cfg = SimConfig(N=32, B=8, c=4, k=4, clients=4, ops=24, seed=seed,
                    stall_prob=0.4, stall_factor=300.0, stall_only="evict",
                    stall_ops=("lock_acquire:query_lock",), order_poll=0.002, full_poll=0.005)
    hot = colliding_plan(cfg.workload().per_client(), cfg.N, cfg.B, seed)
    out = shape_pair(cfg, hot)
    print(f"seed {seed}: {out.events} events, shapes equal: {out.equal}")

# leaf choices should look uniform no matter which blocks are asked for
from concur_oram.harness.shape import LeafRecorder, leaf_uniformity
from concur_oram.harness.runner import run_simulation
from concur_oram.harness.verify import _tools

for dist in ("uniform", "zipf"):
    cfg = SimConfig(N=64, B=8, c=4, k=4, clients=4, ops=2000, record=False, distribution=dist,
                    theta=1.2, order_poll=0.002, full_poll=0.005)
    rec = LeafRecorder(_tools(cfg)[2])
    run_simulation(cfg, observers=[rec])
    chi2, p = leaf_uniformity(rec.leaves, cfg.N)
    print(f"{dist:7s} ids: {len(rec.leaves)} leaves read, chi-square {chi2:.1f}, p = {p:.3f}")
