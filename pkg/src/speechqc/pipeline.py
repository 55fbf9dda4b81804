"""Single-pass streaming analysis of a program's stems.

One chunked pass over the inputs K-weights each signal once and collects
hop-sized segment energies per role (mix / speech / background), plus the
mix peaks. Every downstream measure — momentary, short-term, integrated,
auxiliary activity windows, LRA grids — is then a sliding sum over those
segments, so a one-hour program streams through in bounded memory.

A missing role is derived chunk-wise from the other two (mix = speech +
background); its K-weighted samples come from the linearity of the filter
rather than a third filtering pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import AudioBuffer
from .errors import AlignmentError, ConfigError
from .meter import (
    BlockSeries,
    KWeightedBlockStream,
    MeterConfig,
    PeakReport,
    TruePeakTracker,
)
from .wavio import WavReader

ROLES = ("mix", "speech", "background")


@dataclass(frozen=True)
class AnalysisConfig:
    """Settings for the full speech-aware analysis."""

    meter: MeterConfig = field(default_factory=MeterConfig)
    aux_window: float = 1.0              # auxiliary speech-activity window
    activation_threshold: float = -65.0  # LUFS; below this speech is inactive
    sbld_floor: float | None = -10.0     # LU; local SBLD below this ends activity
    sld_threshold: float = -10.0         # LU; critical when local SLD drops below
    sbld_threshold: float = 0.0          # LU; critical when local SBLD drops below
    lra_hop: float = 1.0                 # hop of the short-term grid feeding LRA
    sbld_cap: float = 30.0               # |local SBLD| reporting cap
    speech_gating: str = "standard"      # "standard" | "ungated" for stem loudness
    gated_background: bool = False       # gate the background side of SBLD too
    stem_residual_tol: float = 1e-3      # allowed |mix - speech - background|
    chunk_s: float = 10.0

    def __post_init__(self):
        if self.speech_gating not in ("standard", "ungated"):
            raise ConfigError(f"speech_gating must be standard|ungated, got {self.speech_gating!r}")
        if self.aux_window <= 0 or self.aux_window > self.meter.short_term_window:
            raise ConfigError("aux_window must be in (0, short_term_window]")

    @property
    def micro_hop(self) -> float:
        """The microscopic series share the short-term hop."""
        return self.meter.short_term_hop

    def engine_hop_samples(self, sample_rate: int) -> int:
        hops = [
            round(self.meter.momentary_hop * sample_rate),
            round(self.meter.short_term_hop * sample_rate),
            round(self.lra_hop * sample_rate),
        ]
        engine = math.gcd(*hops)
        if engine <= 0:
            raise ConfigError("hops collapse below one sample at this rate")
        for window, name in (
            (self.meter.momentary_window, "momentary window"),
            (self.meter.short_term_window, "short-term window"),
            (self.aux_window, "aux window"),
        ):
            if round(window * sample_rate) % engine:
                raise ConfigError(
                    f"{name} of {window:g} s is not commensurate with the "
                    "configured hops at this sample rate"
                )
        offset = round((self.meter.short_term_window - self.aux_window) / 2 * sample_rate)
        if offset % round(self.meter.short_term_hop * sample_rate):
            raise ConfigError(
                "aux and short-term block centers cannot align: "
                "(short_term_window - aux_window)/2 must be a multiple of the hop"
            )
        return engine


DEFAULT_ANALYSIS_CONFIG = AnalysisConfig()


class BufferSource:
    """Chunk reader over an in-memory buffer."""

    def __init__(self, buffer: AudioBuffer):
        self._buffer = buffer
        self._pos = 0

    @property
    def sample_rate(self) -> int:
        return self._buffer.sample_rate

    @property
    def layout(self) -> tuple[str, ...]:
        return self._buffer.layout

    @property
    def n_frames(self) -> int:
        return self._buffer.n_frames

    def read(self, n_frames: int) -> np.ndarray:
        chunk = self._buffer.samples[self._pos:self._pos + n_frames]
        self._pos += chunk.shape[0]
        return chunk

    def close(self):
        pass


def open_source(obj) -> "BufferSource | WavReader":
    if isinstance(obj, AudioBuffer):
        return BufferSource(obj)
    if isinstance(obj, (str,)) or hasattr(obj, "__fspath__"):
        return WavReader(str(obj))
    if isinstance(obj, (BufferSource, WavReader)):
        return obj
    raise TypeError(f"cannot open {type(obj).__name__} as an audio source")


@dataclass
class ProgramSeries:
    """Everything one streaming pass learns about a program."""

    config: AnalysisConfig
    sample_rate: int
    layout: tuple[str, ...]
    n_frames: int
    series: dict[str, BlockSeries]        # per role, including derived ones
    mix_peaks: PeakReport
    provided: tuple[str, ...]             # roles that came from actual inputs
    notes: list[str] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate

    def has(self, role: str) -> bool:
        return role in self.series


def run_pipeline(mix=None, speech=None, background=None,
                 config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> ProgramSeries:
    """Stream the provided inputs (buffers or WAV paths) through the meters."""
    inputs = {"mix": mix, "speech": speech, "background": background}
    sources = {role: open_source(obj) for role, obj in inputs.items() if obj is not None}
    if not sources:
        raise AlignmentError("no inputs: need a mix and/or stems")
    provided = tuple(r for r in ROLES if r in sources)

    first = sources[provided[0]]
    rate, layout = first.sample_rate, first.layout
    for role, src in sources.items():
        if src.sample_rate != rate:
            raise AlignmentError(
                f"{role}: sample rate {src.sample_rate} Hz differs from {rate} Hz"
            )
        if src.layout != layout:
            raise AlignmentError(f"{role}: layout {src.layout} differs from {layout}")

    notes: list[str] = []
    ref_frames = sources[provided[0]].n_frames
    for role in provided[1:]:
        n = sources[role].n_frames
        if n > ref_frames:
            notes.append(f"{role} is longer than the reference; truncated "
                         f"({n} -> {ref_frames} frames)")
        elif n < ref_frames:
            notes.append(f"{role} is shorter than the reference; zero-padded "
                         f"({n} -> {ref_frames} frames)")

    # Which roles can exist at all: a missing one needs both others.
    roles = set(provided)
    derived = None
    if len(roles) == 2:
        derived = next(r for r in ROLES if r not in roles)
        roles.add(derived)
        notes.append(f"{derived} derived from the other two stems")
    engine_hop = config.engine_hop_samples(rate)
    hop_s = engine_hop / rate

    streams = {role: KWeightedBlockStream(rate, layout, hop_s,
                                          config.meter.channel_weights)
               for role in roles}
    peak_tracker = TruePeakTracker(rate, len(layout)) if "mix" in roles else None

    chunk_frames = max(engine_hop, round(config.chunk_s * rate))
    residual = 0.0
    done = 0
    while done < ref_frames:
        want = min(chunk_frames, ref_frames - done)
        raw: dict[str, np.ndarray] = {}
        for role in provided:
            got = sources[role].read(want)
            if got.shape[0] < want:  # exhausted early: zero-pad to reference
                pad = np.zeros((want - got.shape[0], len(layout)))
                got = np.vstack([got, pad]) if got.size else pad
            raw[role] = got
        if derived == "mix":
            raw["mix"] = raw["speech"] + raw["background"]
        elif derived == "speech":
            raw["speech"] = raw["mix"] - raw["background"]
        elif derived == "background":
            raw["background"] = raw["mix"] - raw["speech"]
        elif len(provided) == 3:
            residual = max(residual, float(np.max(np.abs(
                raw["mix"] - raw["speech"] - raw["background"]))))

        weighted: dict[str, np.ndarray] = {}
        for role in provided:
            weighted[role] = streams[role].push(raw[role])
        if derived == "mix":
            streams["mix"].push_weighted(weighted["speech"] + weighted["background"])
        elif derived == "speech":
            streams["speech"].push_weighted(weighted["mix"] - weighted["background"])
        elif derived == "background":
            streams["background"].push_weighted(weighted["mix"] - weighted["speech"])
        if peak_tracker is not None:
            peak_tracker.push(raw["mix"])
        done += want

    for src in sources.values():
        src.close()
    if len(provided) == 3 and residual > config.stem_residual_tol:
        notes.append(f"mix differs from speech+background by up to {residual:.3g} "
                     f"(tolerance {config.stem_residual_tol:.3g})")

    mix_peaks = peak_tracker.result() if peak_tracker is not None else PeakReport(
        sample_peak=float("-inf"), true_peak=float("-inf"))
    return ProgramSeries(
        config=config,
        sample_rate=rate,
        layout=layout,
        n_frames=ref_frames,
        series={role: streams[role].result() for role in streams},
        mix_peaks=mix_peaks,
        provided=provided,
        notes=notes,
    )


def config_with_hop(config: AnalysisConfig, hop: float) -> AnalysisConfig:
    """A copy of ``config`` with the microscopic/short-term hop replaced."""
    return replace(config, meter=replace(config.meter, short_term_hop=hop))
