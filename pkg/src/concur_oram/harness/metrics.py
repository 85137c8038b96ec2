"""Peak tracking and latency summaries."""

from __future__ import annotations

from typing import Dict, Iterable

import numpy as np


class Metrics:
    def __init__(self):
        self.peaks: Dict[str, int] = {}
        self.counts: Dict[str, int] = {}

    def note(self, key: str, value) -> None:
        if value > self.peaks.get(key, -1):
            self.peaks[key] = value
        self.counts[key] = self.counts.get(key, 0) + 1

    def peak(self, key: str, default: int = 0) -> int:
        return self.peaks.get(key, default)


def percentiles_ms(latencies_s: Iterable[float]) -> Dict[str, float]:
    arr = np.asarray(list(latencies_s), dtype=float) * 1000.0
    if arr.size == 0:
        return {"p50": 0.0, "p99": 0.0}
    return {"p50": round(float(np.percentile(arr, 50)), 6), "p99": round(float(np.percentile(arr, 99)), 6)}
