"""Bandwidth per query and throughput as clients are added.

Blocks moved per query grow with the tree height, so the fit is against
log2 N. Throughput under 5 ms round trips grows with the number of
clients because queries in a round proceed in parallel and evictions run
in the background.

    python demos/05_cost_and_scaling.py
"""

import numpy as np

from concur_oram.harness.cost import fit_cost
from concur_oram.harness.runner import SimConfig, run_simulation

pts = []
for N in (64, 256, 1024):
    for c in (2, 4, 8):
        cfg = SimConfig(N=N, B=512, c=c, k=c, clients=2, ops=c * 6, record=False, seed=N + c)
        bpq = run_simulation(cfg).report["blocks_per_query"]
        pts.append((N, c, bpq))
        print(f"N={N:5d} c={c}: {bpq:7.1f} blocks per query")
fit = fit_cost(pts)
print(f"fit: blocks/query <= {fit.alpha:.2f} * log2 N + {fit.beta:.2f} * c")

print()
base = SimConfig(N=256, B=64, c=8, k=8, rtt=0.005, jitter=0.2, ops=160, record=False)
clients = [1, 2, 4, 8]
tput = []
for n in clients:
    rep = run_simulation(base.replace(clients=n)).report
    tput.append(rep["throughput_ops_s"])
    print(f"{n} clients: {rep['throughput_ops_s']:6.1f} ops/s, p99 {rep['latency_ms']['p99']:.0f} ms")
print("speedup over one client:", np.round(np.array(tput) / tput[0], 2))
