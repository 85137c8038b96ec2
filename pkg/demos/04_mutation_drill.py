"""Break the protocol on purpose and watch the checks catch it.

Each mutation disables one safeguard: skipping a dummy read, committing
without the lock, using a too-short eviction subtree, and so on. A drill
runs the mutated protocol under contention and collects the evidence from
the linearizability checker, the transcript audits and the shape
comparison.

    python demos/04_mutation_drill.py
"""

from concur_oram.core import MUTATIONS
from concur_oram.harness.verify import mutation_drill

for name in sorted(MUTATIONS):
    d = mutation_drill(name)
    print(f"{name:24s} detected={d['detected']}")
    for line in d["evidence"][:2]:
        print("    ", line)
