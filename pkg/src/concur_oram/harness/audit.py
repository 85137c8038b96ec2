"""Transcript audits and a live structural monitor.

The audits work on recorded transcripts and need no keys:

* lock discipline: evictions touch the directory, the data tree and the
  main stash only while holding the query lock;
* order sync: a query's DRL append lands at the position it registered at;
* eviction subtree discipline: write-only tree buckets in the subtree are
  written only inside the processing lock;
* fallback rule: a query reads a whole bucket exactly when the bucket's
  access counter says its dummies are used up;
* subtree containment: evictions whose lifetimes overlap never write the
  same bucket below the subtree.

``StructuralMonitor`` is an observer that decrypts server state as it
changes (it holds the key) and checks the bounds on every structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from ..core import OpKind, OramParams, TranscriptEvent, is_real
from ..crypto import CipherSuite
from ..datatree import DATA_TREE, WO_TREE, EstGeometry, TreeLayout, node_level
from ..logset import IDX as LOG_IDX, ID as LOG_ID
from ..state import DIRECTORY, PROCESSING_LOCK, QUERY_LOCK, Directory
from ..posmap import REGION as PM_REGION
from ..stashset import MAIN, IDX as STASH_IDX


@dataclass
class AuditReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str, limit: int = 50) -> None:
        if len(self.violations) < limit:
            self.violations.append(msg)


class _Holders:
    def __init__(self):
        self.held: Dict[str, Set[str]] = {}

    def step(self, ev: TranscriptEvent) -> None:
        if ev.kind == OpKind.LockAcquire:
            self.held.setdefault(ev.session, set()).add(ev.region)
        elif ev.kind == OpKind.LockRelease:
            self.held.get(ev.session, set()).discard(ev.region)

    def holds(self, session: str, lock: str) -> bool:
        return lock in self.held.get(session, ())


def _is_evict(session: str) -> bool:
    return session.startswith("evict")


def _write_target(ev: TranscriptEvent) -> Optional[str]:
    if ev.kind in (OpKind.RegionWrite, OpKind.RegionCreate):
        return ev.region
    if ev.kind == OpKind.ServerCopy:
        return ev.target
    return None


def check_lock_discipline(events: Iterable[TranscriptEvent], report: Optional[AuditReport] = None) -> AuditReport:
    report = report or AuditReport()
    locks = _Holders()
    for ev in events:
        locks.step(ev)
        tgt = _write_target(ev)
        if tgt in (DIRECTORY, DATA_TREE, MAIN) and _is_evict(ev.session):
            if not locks.holds(ev.session, QUERY_LOCK):
                report.add(f"event {ev.seq}: {ev.session} wrote {tgt} without the query lock")
    return report


def check_order_sync(events: Iterable[TranscriptEvent], report: Optional[AuditReport] = None) -> AuditReport:
    report = report or AuditReport()
    registered: Dict[str, Tuple[str, int]] = {}
    for ev in events:
        if ev.kind != OpKind.LogAppend:
            continue
        if ev.region.startswith("query_log/"):
            registered[ev.session] = (ev.region.split("/", 1)[1], ev.offset)
        elif ev.region.startswith("drl/"):
            r = ev.region.split("/", 1)[1]
            reg = registered.pop(ev.session, None)
            if reg is None or reg[0] != r:
                report.add(f"event {ev.seq}: {ev.session} appended to {ev.region} without registering")
            elif reg[1] != ev.offset:
                report.add(f"event {ev.seq}: {ev.session} registered as {reg[1]} but wrote DRL position {ev.offset}")
    return report


def check_est_discipline(events: Iterable[TranscriptEvent], params: OramParams, layout: TreeLayout,
                         report: Optional[AuditReport] = None) -> AuditReport:
    report = report or AuditReport()
    geom = EstGeometry.standard(params.k, params.levels)
    locks = _Holders()
    for ev in events:
        locks.step(ev)
        if ev.kind == OpKind.RegionWrite and ev.region == WO_TREE and _is_evict(ev.session):
            lvl = node_level(layout.locate(ev.offset)[0])
            if lvl < geom.height and not locks.holds(ev.session, PROCESSING_LOCK):
                report.add(f"event {ev.seq}: {ev.session} wrote subtree level {lvl} outside the processing lock")
    return report


def check_fallback_rule(events: Iterable[TranscriptEvent], layout: TreeLayout,
                        report: Optional[AuditReport] = None) -> AuditReport:
    report = report or AuditReport()
    last: Dict[str, Tuple[int, int]] = {}
    full = layout.nslots * layout.block_env
    for ev in events:
        if ev.kind == OpKind.CounterIncr and ev.region.startswith("bucket_acc/"):
            last[ev.session] = (int(ev.region.split("/")[1]), ev.value)
        elif ev.kind == OpKind.RegionRead and ev.region == DATA_TREE:
            node, part, _ = layout.locate(ev.offset)
            if part == "head":
                continue
            got = last.pop(ev.session, None)
            if got is None or got[0] != node:
                report.add(f"event {ev.seq}: slot read of node {node} without a counter draw")
                continue
            exhausted = got[1] - 1 >= layout.S
            want = full if exhausted else layout.block_env
            if ev.length != want:
                report.add(f"event {ev.seq}: access {got[1]} of node {node} read {ev.length} bytes, "
                           f"expected {want}")
    return report


def check_est_containment(events: Sequence[TranscriptEvent], params: OramParams, layout: TreeLayout,
                          report: Optional[AuditReport] = None) -> AuditReport:
    report = report or AuditReport()
    geom = EstGeometry.standard(params.k, params.levels)
    span: Dict[str, List[int]] = {}
    nodes: Dict[str, Set[int]] = {}
    for ev in events:
        if not _is_evict(ev.session):
            continue
        s = span.setdefault(ev.session, [ev.seq, ev.seq])
        s[1] = ev.seq
        if ev.kind == OpKind.RegionWrite and ev.region == WO_TREE:
            node = layout.locate(ev.offset)[0]
            if node_level(node) >= geom.height:
                nodes.setdefault(ev.session, set()).add(node)
    names = sorted(span, key=lambda n: span[n][0])
    for a_i, a in enumerate(names):
        for b in names[a_i + 1:]:
            if span[b][0] > span[a][1]:
                break
            shared = nodes.get(a, set()) & nodes.get(b, set())
            if shared:
                report.add(f"overlapping evictions {a} and {b} both wrote node(s) {sorted(shared)[:4]}")
    return report


def audit_transcript(events: Sequence[TranscriptEvent], params: OramParams, layout: TreeLayout) -> AuditReport:
    rep = AuditReport()
    check_lock_discipline(events, rep)
    check_order_sync(events, rep)
    check_est_discipline(events, params, layout, rep)
    check_fallback_rule(events, layout, rep)
    check_est_containment(events, params, layout, rep)
    return rep


# -- live monitor ------------------------------------------------------------------

class StructuralMonitor:
    """Observer checking structure bounds against decrypted server state.

    Checked on every change: DRL and query log length <= c; at every
    directory write, DR-LogSet and StashSet sizes <= c, no two adjacent
    temporary stashes resident, and no block id indexed by two live bigentry
    logs (after removals); every new temporary stash holds <= MaxStash real
    blocks. Peaks are kept in ``peaks``.
    """

    def __init__(self, params: OramParams, suite: CipherSuite):
        self.p = params
        self.suite = suite
        self.peaks: Dict[str, int] = {}
        self.report = AuditReport()

    def _peak(self, key: str, v: int) -> None:
        if v > self.peaks.get(key, -1):
            self.peaks[key] = v

    def _ids_in_index(self, raw: bytes, fmt) -> List[int]:
        plain = self.suite.decrypt(raw)
        return [fmt.unpack_from(plain, j * fmt.size)[0] for j in range(len(plain) // fmt.size)]

    def __call__(self, ev: TranscriptEvent, core) -> None:
        p = self.p
        if ev.kind == OpKind.LogAppend:
            if ev.region.startswith("drl/"):
                self._peak("drl", ev.value)
                if ev.value > p.c:
                    self.report.add(f"event {ev.seq}: {ev.region} holds {ev.value} > c entries")
            elif ev.region.startswith("query_log/"):
                self._peak("query_log", ev.value)
                if ev.value > p.c:
                    self.report.add(f"event {ev.seq}: {ev.region} holds {ev.value} > c entries")
        elif ev.kind == OpKind.RegionCreate and ev.region.startswith("temp_stash_index/"):
            ids = self._ids_in_index(core.regions[ev.region], STASH_IDX)
            n = sum(1 for b in ids if is_real(b, p.N))
            self._peak("stash", n)
            if n > p.max_stash:
                self.report.add(f"event {ev.seq}: {ev.region} holds {n} > MaxStash blocks")
        elif ev.kind == OpKind.RegionWrite and ev.region == DIRECTORY:
            self._directory(ev, core)

    def _directory(self, ev: TranscriptEvent, core) -> None:
        p = self.p
        d = Directory.decode(bytes(core.regions[DIRECTORY]))
        self._peak("drlogset", len(d.logs))
        self._peak("stashset", len(d.stashes))
        if len(d.logs) > p.c:
            self.report.add(f"event {ev.seq}: DR-LogSet holds {len(d.logs)} > c logs")
        if len(d.stashes) > p.c:
            self.report.add(f"event {ev.seq}: StashSet holds {len(d.stashes)} > c stashes")
        s = set(d.stashes)
        if any(e + 1 in s for e in s):
            self.report.add(f"event {ev.seq}: adjacent temporary stashes resident: {d.stashes}")
        owner: Dict[int, int] = {}
        for j in d.logs:
            name = f"bigentry_index/{j}"
            if name not in core.regions:
                continue
            gone = set()
            for env in core.logs.get(f"bigentry_rm/{j}", []):
                gone.add(LOG_ID.unpack(self.suite.decrypt(env))[0])
            for bid in self._ids_in_index(core.regions[name], LOG_IDX):
                if is_real(bid, p.N) and bid not in gone:
                    if bid in owner:
                        self.report.add(f"event {ev.seq}: block {bid} live in logs {owner[bid]} and {j}")
                    owner[bid] = j


class StashReadAudit:
    """Keyless observer: every query reads one slot of each temporary stash
    that the directory listed as resident when the query registered.

    The directory is cleartext, so this uses nothing the server does not see.
    A query's stash-set read starts with its full read of the main stash and
    ends with its position map read.
    """

    def __init__(self):
        self.last_dir: Dict[str, List[int]] = {}
        self.open: Dict[str, Tuple[List[int], List[int]]] = {}
        self.report = AuditReport()
        self.checked = 0
        self.nonempty = 0

    def __call__(self, ev: TranscriptEvent, core) -> None:
        s = ev.session
        if not s.startswith("client") or ev.kind != OpKind.RegionRead:
            return
        if ev.region == DIRECTORY:
            self.last_dir[s] = list(Directory.decode(bytes(core.regions[DIRECTORY])).stashes)
        elif ev.region == MAIN:
            self.open[s] = (self.last_dir.get(s, []), [])
        elif ev.region.startswith("temp_stash/") and s in self.open and ev.length < len(core.regions[ev.region]):
            self.open[s][1].append(int(ev.region.split("/")[1]))
        elif ev.region == PM_REGION and s in self.open:
            want, got = self.open.pop(s)
            self.checked += 1
            self.nonempty += bool(want)
            if sorted(got) != sorted(want):
                self.report.add(f"event {ev.seq}: {s} read stashes {got}, resident were {want}")
