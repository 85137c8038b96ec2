"""Exhaustive checks of the eviction schedule geometry.

Two properties of reverse-lexicographic paths make parallel evictions safe:

* among any k consecutive eviction counters, two turn strings share at most
  log2(k) trailing bits (at most log2(k)+1 among 2k consecutive ones);
* so any two of k consecutive eviction paths meet only in the top
  log2(k)+1 levels, the eviction subtree.

Window maxima are computed for every window start with the recurrence
W_L[s] = max(W_{L-1}[s], W_{L-1}[s+1], lcs(s, s+L-1)), which visits every
pair of every window once per window length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Collection, Dict, Iterable, List, Optional

import numpy as np

from ..datatree import path_nodes, reverse_lex_path, shared_levels


def _lcs_vec(a: np.ndarray, b: np.ndarray, width: int) -> np.ndarray:
    """Trailing common bits of width-bit integers, elementwise."""
    x = (a ^ b) & ((1 << width) - 1)
    low = x & -x
    out = np.where(x == 0, width, 0)
    nz = x != 0
    out[nz] = np.log2(low[nz]).astype(np.int64)
    return out


def window_maxima(N: int, keep: Optional[Collection[int]] = None) -> Dict[int, np.ndarray]:
    """For every window length L in 2..N (or only those in ``keep``), the
    largest pairwise common suffix inside each of the N cyclic windows of L
    consecutive integers."""
    width = N.bit_length() - 1
    s = np.arange(N, dtype=np.int64)
    cur = np.full(N, -1, dtype=np.int64)  # length 1: no pairs
    out = {}
    for L in range(2, N + 1):
        tail = _lcs_vec(s, (s + L - 1) % N, width)
        cur = np.maximum(np.maximum(cur, np.roll(cur, -1)), tail)
        if keep is None or L in keep:
            out[L] = cur.copy()
    return out


@dataclass
class CombinatoricsReport:
    checked: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_windows(Ns: Iterable[int] = tuple(2 ** e for e in range(3, 13))) -> CombinatoricsReport:
    """For every N and power-of-two k <= N/2: every k-window has maximum
    pairwise common suffix <= log2(k), every 2k-window <= log2(k)+1."""
    rep = CombinatoricsReport()
    for N in Ns:
        maxima = window_maxima(N, {2 ** e for e in range(1, N.bit_length())})
        k = 1
        while k <= N // 2:
            lg = k.bit_length() - 1
            for L, bound in ((k, lg), (2 * k, lg + 1)):
                if L < 2:
                    continue
                w = maxima[L]
                rep.checked += N
                bad = np.nonzero(w > bound)[0]
                if bad.size:
                    rep.failures.append(f"N={N} k={k} window {L} at start {int(bad[0])}: "
                                        f"common suffix {int(w[bad[0]])} > {bound}")
            k *= 2
    return rep


def check_windows_direct(N: int, k: int) -> CombinatoricsReport:
    """Same property, pair by pair, over the turn strings of the actual
    eviction leaves (slow; for small N)."""
    rep = CombinatoricsReport()
    lg = k.bit_length() - 1
    for L, bound in ((k, lg), (2 * k, lg + 1)):
        if L < 2 or L > N:
            continue
        for start in range(N):
            leaves = [reverse_lex_path(start + j, N) for j in range(L)]
            # the turn string is the leaf's bits reversed, so a common
            # suffix of counters is a common prefix of leaves
            worst = max(shared_levels(a, b, N) - 1 for i, a in enumerate(leaves) for b in leaves[i + 1:])
            rep.checked += 1
            if worst > bound:
                rep.failures.append(f"N={N} k={k} window {L} at start {start}: {worst} > {bound}")
    return rep


def check_est_containment_exhaustive(max_N: int = 64, max_k: int = 8,
                                     schedule: Callable[[int, int], int] = reverse_lex_path) -> CombinatoricsReport:
    """Any two of k consecutive eviction paths share buckets only at levels
    below log2(k)+1, for every N <= max_N, k <= min(max_k, N/2), start.
    ``schedule(ctr, N)`` gives the leaf of eviction ``ctr``."""
    rep = CombinatoricsReport()
    N = 4
    while N <= max_N:
        k = 1
        while k <= min(max_k, N // 2):
            h = k.bit_length()  # log2(k) + 1
            for start in range(N):
                paths = [set(path_nodes(schedule(start + j, N), N)) for j in range(k)]
                for i in range(k):
                    for j in range(i + 1, k):
                        rep.checked += 1
                        deepest = max((n + 1).bit_length() - 1 for n in paths[i] & paths[j])
                        if deepest >= h:
                            rep.failures.append(f"N={N} k={k} start={start}: paths {i},{j} share level {deepest}")
            k *= 2
        N *= 2
    return rep


def run_all() -> Dict[str, object]:
    w = check_windows()
    e = check_est_containment_exhaustive()
    return {"windows": {"checked": w.checked, "failures": w.failures[:10]},
            "est_containment": {"checked": e.checked, "failures": e.failures[:10]},
            "ok": w.ok and e.ok}
