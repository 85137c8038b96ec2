"""What the server learns: canonical transcript shapes and leaf statistics.

``trace_shape`` maps a transcript to the tuple sequence that must not depend
on which blocks were accessed. Events keep their session, kind, region class
and sizes; the few positions that are data dependent by design are replaced
by what an observer may know about them:

* query reads of the data tree become (level, "head" | "slots"). The slot
  position inside a permuted bucket is uniformly random and each slot is read
  at most once per bucket version (``FreshnessTracker`` checks this). Whether
  the slot read was a single slot or the whole bucket depends only on the
  bucket's public access counter (``audit.check_fallback_rule`` checks this).
* reads of one position map super-block lose their offset.
* slot reads of temporary stashes and bigentry logs lose their offset
  (fresh permutation per round, checked for reuse like tree slots).
* per-bucket access counters are reported by level, without their value.

Everything else (eviction paths, log lengths, directory writes, lock
traffic) is kept verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import stats

from ..core import OpKind, TranscriptEvent
from ..datatree import DATA_TREE, TreeLayout, node_level
from ..posmap import REGION as PM_REGION

Shape = Tuple


def region_class(name: str) -> str:
    """Name with per-instance numbers removed, e.g. ``temp_stash/7`` ->
    ``temp_stash``."""
    return name.split("/", 1)[0]


class ShapeCanon:
    """Canonicalizer bound to one ORAM geometry."""

    def __init__(self, layout: TreeLayout, pm_region_size: int):
        self.layout = layout
        self.pm_size = pm_region_size

    def event(self, ev: TranscriptEvent) -> Shape:
        kind, name = ev.kind, ev.region
        cls = region_class(name)
        if kind == OpKind.RegionRead and name == DATA_TREE:
            node, part, _ = self.layout.locate(ev.offset)
            return (ev.session, kind.value, cls, node_level(node), "head" if part == "head" else "slots")
        if kind == OpKind.RegionRead and name == PM_REGION and ev.length < self.pm_size:
            return (ev.session, kind.value, cls, "super", ev.length)
        if kind == OpKind.RegionRead and cls in ("temp_stash", "bigentry"):
            return (ev.session, kind.value, name, "slot", ev.length)
        if kind in (OpKind.CounterIncr, OpKind.CounterRead) and cls == "bucket_acc":
            node = int(name.split("/")[1])
            return (ev.session, kind.value, cls, node_level(node))
        return (ev.session, kind.value, name, ev.offset, ev.length, ev.value, ev.target)

    def shape(self, events: Iterable[TranscriptEvent]) -> List[Shape]:
        return [self.event(ev) for ev in events]


def trace_shape(events: Iterable[TranscriptEvent], layout: TreeLayout, pm_region_size: int) -> List[Shape]:
    return ShapeCanon(layout, pm_region_size).shape(events)


def first_difference(a: Sequence[Shape], b: Sequence[Shape]) -> Optional[int]:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None if len(a) == len(b) else min(len(a), len(b))


# -- slot freshness -------------------------------------------------------------

@dataclass
class FreshnessTracker:
    """Checks that no slot of a permuted container is read twice between two
    rewrites of that container.

    Tracked containers: data tree buckets (single-slot query reads; whole
    bucket reads are the counter fallback and are exempt), temporary stashes
    and bigentry logs (single-slot reads). A write, create, copy or swap
    touching a container resets it.
    """

    layout: TreeLayout
    block_env: int
    seen: Dict[Tuple[str, int], Set[int]] = field(default_factory=dict)
    violations: List[str] = field(default_factory=list)

    def _reset_region(self, name: str) -> None:
        for key in [k for k in self.seen if k[0] == name]:
            del self.seen[key]

    def _reset_tree(self, offset: int, length: int) -> None:
        lay = self.layout
        first = lay.locate(offset)[0]
        last = lay.locate(offset + max(length, 1) - 1)[0]
        for node in range(first, last + 1):
            self.seen.pop((DATA_TREE, node), None)

    def __call__(self, ev: TranscriptEvent, core=None) -> None:
        kind, name = ev.kind, ev.region
        cls = region_class(name)
        if kind == OpKind.RegionRead:
            if name == DATA_TREE:
                node, part, _ = self.layout.locate(ev.offset)
                if part == "head" or ev.length != self.block_env:
                    return
                key, slot = (DATA_TREE, node), ev.offset
            elif cls in ("temp_stash", "bigentry") and ev.length == self.block_env:
                key, slot = (name, 0), ev.offset
            else:
                return
            got = self.seen.setdefault(key, set())
            if slot in got:
                self.violations.append(f"event {ev.seq}: {ev.session} re-read slot at {slot} of {key[0]}"
                                       + (f" node {key[1]}" if key[0] == DATA_TREE else ""))
            got.add(slot)
        elif kind in (OpKind.RegionWrite, OpKind.RegionCreate, OpKind.RegionDelete):
            if name == DATA_TREE:
                self._reset_tree(ev.offset, ev.length)
            else:
                self._reset_region(name)
        elif kind == OpKind.ServerCopy:
            if ev.target == DATA_TREE:
                self._reset_tree(ev.value, ev.length)
            else:
                self._reset_region(ev.target)
        elif kind == OpKind.RefSwap:
            self._reset_region(name)
            self._reset_region(ev.target)


# -- leaf distribution ------------------------------------------------------------

def query_leaves(events: Iterable[TranscriptEvent], layout: TreeLayout) -> List[int]:
    """Leaf of every query path, taken from its leaf-level head read."""
    depth = layout.N.bit_length() - 1
    out = []
    for ev in events:
        if ev.kind == OpKind.RegionRead and ev.region == DATA_TREE and ev.session.startswith("client"):
            node, part, _ = layout.locate(ev.offset)
            if part == "head" and node_level(node) == depth:
                out.append(node - (layout.N - 1))
    return out


class LeafRecorder:
    """Observer version of ``query_leaves`` for runs without a transcript."""

    def __init__(self, layout: TreeLayout):
        self.layout = layout
        self.leaves: List[int] = []

    def __call__(self, ev: TranscriptEvent, core=None) -> None:
        if ev.kind == OpKind.RegionRead and ev.region == DATA_TREE and ev.session.startswith("client"):
            self.leaves += query_leaves((ev,), self.layout)


def leaf_uniformity(leaves: Sequence[int], N: int) -> Tuple[float, float]:
    """Chi-square goodness of fit of the leaf counts against uniform.
    Returns (statistic, p-value)."""
    counts = np.bincount(np.asarray(leaves, dtype=int), minlength=N)
    res = stats.chisquare(counts)
    return float(res.statistic), float(res.pvalue)


@dataclass
class ObliviousVerdict:
    ok: bool
    first_diff: Optional[int]
    pvalues: Tuple[float, float]
    reason: str = ""

    def __bool__(self):
        return self.ok


def check_oblivious(trace_a: Sequence[TranscriptEvent], trace_b: Sequence[TranscriptEvent],
                    layout: TreeLayout, pm_region_size: int, alpha: float = 0.01,
                    min_leaves: int = 0) -> ObliviousVerdict:
    """Exact shape equality of two transcripts, plus chi-square uniformity
    of each one's query leaves (only when it has at least ``min_leaves``;
    short traces carry too few samples for the test)."""
    sa = {ev.session for ev in trace_a if ev.session.startswith("client")}
    sb = {ev.session for ev in trace_b if ev.session.startswith("client")}
    if sa != sb:
        raise ValueError(f"traces come from different schedules: clients {sorted(sa ^ sb)}")
    canon = ShapeCanon(layout, pm_region_size)
    d = first_difference(canon.shape(trace_a), canon.shape(trace_b))
    pv = []
    for tr in (trace_a, trace_b):
        leaves = query_leaves(tr, layout)
        pv.append(leaf_uniformity(leaves, layout.N)[1] if len(leaves) >= max(1, min_leaves) else 1.0)
    if d is not None:
        return ObliviousVerdict(False, d, tuple(pv), f"shapes differ at event {d}")
    if min(pv) <= alpha:
        return ObliviousVerdict(False, None, tuple(pv), f"leaf choices not uniform (p={min(pv):.4g})")
    return ObliviousVerdict(True, None, tuple(pv))
