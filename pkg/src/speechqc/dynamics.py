"""Loudness range: dispersion of gated short-term loudness.

Works on any short-term timeline — full program, speech-gated mix, or the
clean speech stem — so the same function yields program LRA, speech-gated
LRA, and speech LRA.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .meter import (
    ABSOLUTE_GATE_LUFS,
    LoudnessTimeline,
    energy_from_lufs,
    lufs_from_energy,
)

# LRA uses its own, deeper relative gate than integrated loudness.
LRA_RELATIVE_GATE_LU = -20.0
LRA_LOW_PERCENTILE = 10.0
LRA_HIGH_PERCENTILE = 95.0


@dataclass
class LraResult:
    """Loudness range with the percentile levels that define it."""

    lra: float                      # LU
    low_percentile_loudness: float  # LUFS
    high_percentile_loudness: float
    gated_block_count: int


def lra_from_values(values: np.ndarray,
                    absolute_gate: float = ABSOLUTE_GATE_LUFS,
                    relative_gate_offset: float = LRA_RELATIVE_GATE_LU) -> LraResult | None:
    """LRA of raw short-term block loudness values; None when all gated out.

    Percentiles are linear interpolation between order statistics, which
    tracks the histogram method of deployed meters to within 0.1 LU.
    """
    values = np.asarray(values, dtype=np.float64)
    stage1 = values[values > absolute_gate]
    if stage1.size == 0:
        return None
    relative_gate = lufs_from_energy(np.mean(energy_from_lufs(stage1))) + relative_gate_offset
    survivors = stage1[stage1 > relative_gate]
    if survivors.size == 0:
        return None
    low, high = np.percentile(survivors, [LRA_LOW_PERCENTILE, LRA_HIGH_PERCENTILE])
    return LraResult(
        lra=float(high - low),
        low_percentile_loudness=float(low),
        high_percentile_loudness=float(high),
        gated_block_count=int(survivors.size),
    )


def lra(timeline: LoudnessTimeline,
        absolute_gate: float = ABSOLUTE_GATE_LUFS,
        relative_gate_offset: float = LRA_RELATIVE_GATE_LU) -> LraResult | None:
    """Loudness range of a 3 s short-term timeline."""
    if abs(timeline.window - 3.0) > 1e-9:
        raise ValueError(
            f"LRA is defined over 3 s short-term blocks, got a {timeline.window:g} s window"
        )
    return lra_from_values(timeline.values, absolute_gate, relative_gate_offset)
