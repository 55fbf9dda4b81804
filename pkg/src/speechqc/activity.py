"""Speech-activity handling: sidecar files and hop-aligned activity masks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import SidecarError

log = logging.getLogger(__name__)

Interval = tuple[float, float]


def merge_intervals(intervals: list[Interval], gap: float = 0.0) -> list[Interval]:
    """Sort intervals and merge any that overlap or sit within ``gap`` seconds."""
    merged: list[Interval] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1] + gap:
            prev_start, prev_end = merged[-1]
            merged[-1] = (prev_start, max(prev_end, end))
        else:
            merged.append((start, end))
    return merged


@dataclass
class ActivitySidecar:
    """Speech-activity intervals as read from (or written to) a sidecar file."""

    intervals: list[Interval]
    source: str = "external"  # oracle | derived | external

    @property
    def coverage_s(self) -> float:
        return sum(end - start for start, end in self.intervals)


def load_activity(path: str) -> ActivitySidecar:
    """Parse a ``start_seconds,end_seconds`` CSV sidecar.

    Intervals are sorted; overlapping or touching ones are merged (logged).
    Negative times or end <= start raise with the offending line number.
    """
    intervals: list[Interval] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise SidecarError(f"expected 'start,end', got {text!r}", line=lineno)
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise SidecarError(f"non-numeric interval {text!r}", line=lineno) from None
            if start < 0 or end < 0:
                raise SidecarError(f"negative time in {text!r}", line=lineno)
            if end <= start:
                raise SidecarError(f"end must exceed start in {text!r}", line=lineno)
            intervals.append((start, end))
    merged = merge_intervals(intervals)
    if len(merged) != len(intervals):
        log.warning("%s: merged %d overlapping/adjacent intervals into %d",
                    path, len(intervals), len(merged))
    return ActivitySidecar(intervals=merged, source="oracle")


def save_activity(path: str, sidecar: ActivitySidecar):
    with open(path, "w") as f:
        for start, end in sidecar.intervals:
            f.write(f"{start:.6f},{end:.6f}\n")


@dataclass
class SpeechActivity:
    """Where speech counts as active, as a hop-aligned mask plus intervals.

    ``times`` are the evaluation instants of the microscopic grid;
    ``mask[k]`` says whether the hop centred at ``times[k]`` is active. The
    derived ``intervals`` extend half a hop either side of the active run.
    """

    times: np.ndarray
    mask: np.ndarray
    hop: float
    source: str = "derived"
    intervals: list[Interval] = field(init=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.mask.shape != self.times.shape:
            raise ValueError("mask and times must have the same length")
        self.intervals = self._intervals_from_mask()

    def _intervals_from_mask(self) -> list[Interval]:
        if self.mask.size == 0 or not self.mask.any():
            return []
        edges = np.flatnonzero(np.diff(np.concatenate(([0], self.mask.view(np.int8), [0]))))
        half = self.hop / 2.0
        return [
            (float(self.times[a] - half), float(self.times[b - 1] + half))
            for a, b in zip(edges[::2], edges[1::2])
        ]

    @property
    def coverage_s(self) -> float:
        return float(np.count_nonzero(self.mask)) * self.hop

    @property
    def is_empty(self) -> bool:
        return not bool(self.mask.any())

    def active_at(self, times: np.ndarray) -> np.ndarray:
        """Membership test: which of ``times`` fall inside an active interval."""
        times = np.asarray(times, dtype=np.float64)
        result = np.zeros(times.shape, dtype=bool)
        for start, end in self.intervals:
            result |= (times >= start) & (times <= end)
        return result

    @classmethod
    def from_intervals(cls, intervals: list[Interval], times: np.ndarray,
                       hop: float, source: str = "oracle") -> "SpeechActivity":
        """Quantise continuous intervals onto the analysis grid.

        A hop is active when its evaluation instant lies inside an interval,
        so sidecar intervals are effectively rounded to hop granularity.
        """
        times = np.asarray(times, dtype=np.float64)
        mask = np.zeros(times.shape, dtype=bool)
        for start, end in merge_intervals(list(intervals)):
            mask |= (times >= start) & (times <= end)
        return cls(times=times, mask=mask, hop=hop, source=source)
