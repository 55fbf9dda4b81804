"""ITU-R BS.1770-style loudness measurement.

The measurement chain is: K-weighting (high-shelf pre-filter plus RLB
high-pass), per-channel mean-square block energies over a sliding window,
channel-weighted summation, and, for integrated loudness, two-stage gating
(absolute threshold, then a relative threshold under the energy mean of the
survivors).

Everything is built on a streaming segment engine so that block series for
several window lengths (momentary 400 ms, short-term 3 s, auxiliary 1 s)
come out of a single filtering pass, and arbitrary chunking of the input
yields bit-identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .audio import AudioBuffer
from .errors import ProgramTooShortError

LOUDNESS_OFFSET = -0.691  # calibrates a 997 Hz stereo sine at -23 dBFS to -23.0 LUFS
ABSOLUTE_GATE_LUFS = -70.0
RELATIVE_GATE_LU = -10.0

# Channel weights: unity for front channels, 1.41 for surrounds, LFE excluded.
DEFAULT_CHANNEL_WEIGHTS = {
    "M": 1.0, "L": 1.0, "R": 1.0, "C": 1.0, "LFE": 0.0, "Ls": 1.41, "Rs": 1.41,
}

# Published 48 kHz coefficients for the two K-weighting biquads.
_K_SOS_48K = np.array([
    [1.53512485958697, -2.69169618940638, 1.19839281085285,
     1.0, -1.69065929318241, 0.73248077421585],
    [1.0, -2.0, 1.0,
     1.0, -1.99004745483398, 0.99007225036621],
])

# Analog prototype parameters used to re-derive the biquads at other rates.
_SHELF_F0 = 1681.9744509555319
_SHELF_GAIN_DB = 3.999843853973347
_SHELF_Q = 0.7071752369554196
_HIGHPASS_F0 = 38.13547087602444
_HIGHPASS_Q = 0.5003270373238773


def k_filter_sos(sample_rate: int) -> np.ndarray:
    """K-weighting filter as two second-order sections for ``sample_rate``.

    Returns the published coefficients at 48 kHz and a bilinear-transform
    re-derivation of the same analog prototypes elsewhere. The high-pass
    keeps the conventional un-normalised numerator [1, -2, 1].
    """
    if sample_rate == 48000:
        return _K_SOS_48K.copy()
    k = math.tan(math.pi * _SHELF_F0 / sample_rate)
    vh = 10.0 ** (_SHELF_GAIN_DB / 20.0)
    vb = vh ** 0.4996667741545416
    a0 = 1.0 + k / _SHELF_Q + k * k
    shelf = [
        (vh + vb * k / _SHELF_Q + k * k) / a0,
        2.0 * (k * k - vh) / a0,
        (vh - vb * k / _SHELF_Q + k * k) / a0,
        1.0,
        2.0 * (k * k - 1.0) / a0,
        (1.0 - k / _SHELF_Q + k * k) / a0,
    ]
    k = math.tan(math.pi * _HIGHPASS_F0 / sample_rate)
    a0 = 1.0 + k / _HIGHPASS_Q + k * k
    highpass = [
        1.0, -2.0, 1.0,
        1.0,
        2.0 * (k * k - 1.0) / a0,
        (1.0 - k / _HIGHPASS_Q + k * k) / a0,
    ]
    return np.array([shelf, highpass])


def k_weight(buffer: AudioBuffer) -> AudioBuffer:
    """Apply the K-weighting cascade with zero initial conditions."""
    sos = k_filter_sos(buffer.sample_rate)
    return buffer.with_samples(signal.sosfilt(sos, buffer.samples, axis=0))


def channel_weight_vector(layout: tuple[str, ...],
                          weights: dict[str, float] | None = None) -> np.ndarray:
    table = DEFAULT_CHANNEL_WEIGHTS if weights is None else weights
    try:
        return np.array([table[role] for role in layout], dtype=np.float64)
    except KeyError as exc:
        raise ValueError(f"no channel weight defined for role {exc.args[0]!r}") from None


def lufs_from_energy(z: np.ndarray | float):
    """Loudness of a channel-weighted mean-square energy; silence maps to -inf."""
    with np.errstate(divide="ignore"):
        return LOUDNESS_OFFSET + 10.0 * np.log10(z)


def energy_from_lufs(lufs: np.ndarray | float):
    return np.power(10.0, (np.asarray(lufs) - LOUDNESS_OFFSET) / 10.0)


@dataclass(frozen=True)
class MeterConfig:
    """Window, gating, and channel-weight settings for the meter."""

    momentary_window: float = 0.4
    momentary_hop: float = 0.1
    short_term_window: float = 3.0
    short_term_hop: float = 0.1
    absolute_gate: float = ABSOLUTE_GATE_LUFS
    relative_gate_offset: float = RELATIVE_GATE_LU
    channel_weights: dict[str, float] | None = None

    def __post_init__(self):
        for window, hop, name in (
            (self.momentary_window, self.momentary_hop, "momentary"),
            (self.short_term_window, self.short_term_hop, "short_term"),
        ):
            if window <= 0:
                raise ValueError(f"{name} window must be positive")
            if not 0 < hop <= window:
                raise ValueError(f"{name} hop must be in (0, window]")
        if self.absolute_gate >= 0:
            raise ValueError("absolute gate must be below 0 LUFS")


DEFAULT_METER_CONFIG = MeterConfig()


@dataclass
class LoudnessTimeline:
    """Block loudness over time for one signal role."""

    times: np.ndarray       # block-center seconds
    values: np.ndarray      # LUFS; -inf marks silent blocks
    window: float           # seconds
    hop: float              # seconds
    signal_role: str = "mix"

    def __len__(self) -> int:
        return len(self.values)

    @property
    def max(self) -> float:
        finite = self.values[np.isfinite(self.values)]
        return float(np.max(finite)) if finite.size else float("-inf")

    def decimated(self, step: int) -> "LoudnessTimeline":
        """Every ``step``-th block; equivalent to measuring at hop*step."""
        return LoudnessTimeline(self.times[::step], self.values[::step],
                                self.window, self.hop * step, self.signal_role)


@dataclass
class BlockSeries:
    """Per-segment K-weighted energies of one signal.

    ``seg_sums[i, c]`` is the sum of squared K-weighted samples of channel
    ``c`` over hop-sized segment ``i``. Block energies for any window that
    is a whole multiple of the hop are sliding sums over this array, so one
    filtering pass serves every window length the analysis needs.
    """

    sample_rate: int
    hop_samples: int
    seg_sums: np.ndarray    # (n_segments, n_channels)
    weight_vec: np.ndarray  # (n_channels,)

    @property
    def hop_s(self) -> float:
        return self.hop_samples / self.sample_rate

    def _strides(self, window_s: float, hop_s: float | None) -> tuple[int, int]:
        """Window and hop as whole numbers of engine segments."""
        window_samples = round(window_s * self.sample_rate)
        if window_samples % self.hop_samples:
            raise ValueError(
                f"window of {window_samples} samples is not a multiple of the "
                f"{self.hop_samples}-sample engine hop"
            )
        if hop_s is None:
            step = 1
        else:
            hop_samples = round(hop_s * self.sample_rate)
            if hop_samples % self.hop_samples:
                raise ValueError(
                    f"hop of {hop_samples} samples is not a multiple of the "
                    f"{self.hop_samples}-sample engine hop"
                )
            step = hop_samples // self.hop_samples
        return window_samples // self.hop_samples, step

    def block_energies(self, window_s: float, hop_s: float | None = None) -> np.ndarray:
        """Channel-weighted mean-square energy per block (may be empty)."""
        m, step = self._strides(window_s, hop_s)
        n = self.seg_sums.shape[0]
        if n < m:
            return np.empty(0)
        windows = np.lib.stride_tricks.sliding_window_view(self.seg_sums, m, axis=0)
        block_sums = windows.sum(axis=-1)[::step]  # (n_blocks, ch)
        z = block_sums / (m * self.hop_samples)
        return z @ self.weight_vec

    def block_times(self, window_s: float, hop_s: float | None = None) -> np.ndarray:
        """Block-center times for ``window_s`` blocks."""
        m, step = self._strides(window_s, hop_s)
        n_blocks = max(0, self.seg_sums.shape[0] - m + 1)
        starts = np.arange(0, n_blocks, step) * self.hop_samples
        return (starts + m * self.hop_samples / 2.0) / self.sample_rate

    def loudness(self, window_s: float, hop_s: float | None = None,
                 role: str = "mix") -> LoudnessTimeline:
        z = self.block_energies(window_s, hop_s)
        return LoudnessTimeline(
            times=self.block_times(window_s, hop_s),
            values=lufs_from_energy(z) if z.size else z,
            window=window_s,
            hop=self.hop_s if hop_s is None else hop_s,
            signal_role=role,
        )


class KWeightedBlockStream:
    """Streaming front half of the meter: K-weighting plus segment energies.

    Instances are single-owner state machines (filter state, a partial
    segment buffer); feed chunks in order with :meth:`push` and collect the
    :class:`BlockSeries` with :meth:`result`. Chunk boundaries never change
    the output: segments are materialised contiguously before squaring, so
    any chunking produces bit-identical segment sums.
    """

    def __init__(self, sample_rate: int, layout: tuple[str, ...], hop_s: float,
                 weights: dict[str, float] | None = None):
        self.sample_rate = sample_rate
        self.layout = layout
        self.hop_samples = round(hop_s * sample_rate)
        if self.hop_samples <= 0:
            raise ValueError(f"hop of {hop_s} s is below one sample at {sample_rate} Hz")
        n_ch = len(layout)
        self._sos = k_filter_sos(sample_rate)
        self._zi = np.zeros((self._sos.shape[0], 2, n_ch))
        self._seg_buf = np.empty((self.hop_samples, n_ch))
        self._fill = 0
        self._sums: list[np.ndarray] = []
        self._weight_vec = channel_weight_vector(layout, weights)

    def push(self, chunk: np.ndarray) -> np.ndarray:
        """Consume one chunk; returns the K-weighted samples for reuse."""
        if chunk.ndim != 2 or chunk.shape[1] != len(self.layout):
            raise ValueError(f"chunk shape {chunk.shape} does not match layout {self.layout}")
        if chunk.shape[0] == 0:
            return chunk
        filtered, self._zi = signal.sosfilt(self._sos, chunk, axis=0, zi=self._zi)
        self.push_weighted(filtered)
        return filtered

    def push_weighted(self, filtered: np.ndarray):
        """Consume samples that are already K-weighted."""
        pos, n = 0, filtered.shape[0]
        while pos < n:
            take = min(n - pos, self.hop_samples - self._fill)
            self._seg_buf[self._fill:self._fill + take] = filtered[pos:pos + take]
            self._fill += take
            pos += take
            if self._fill == self.hop_samples:
                self._sums.append(np.sum(np.square(self._seg_buf), axis=0))
                self._fill = 0

    def result(self) -> BlockSeries:
        """Finish the stream; a trailing partial segment is discarded."""
        seg = (np.asarray(self._sums)
               if self._sums else np.empty((0, len(self.layout))))
        return BlockSeries(self.sample_rate, self.hop_samples, seg, self._weight_vec)


def _series_for(buffer: AudioBuffer, hop_s: float,
                weights: dict[str, float] | None = None) -> BlockSeries:
    stream = KWeightedBlockStream(buffer.sample_rate, buffer.layout, hop_s, weights)
    stream.push(buffer.samples)
    return stream.result()


def block_loudness(buffer: AudioBuffer, window: float, hop: float,
                   weights: dict[str, float] | None = None,
                   role: str = "mix") -> LoudnessTimeline:
    """Channel-weighted K-weighted block loudness over a sliding window."""
    if buffer.duration < window:
        raise ProgramTooShortError(
            f"program too short: {buffer.duration:.3f} s is below the "
            f"{window:g} s analysis window"
        )
    rate = buffer.sample_rate
    window_samples = round(window * rate)
    hop_samples = round(hop * rate)
    if hop_samples <= 0 or hop_samples > window_samples:
        raise ValueError("hop must be in (0, window]")
    if window_samples % hop_samples == 0:
        return _series_for(buffer, hop, weights).loudness(window, role=role)
    # General path for hops that do not divide the window: cumulative sums of
    # squared K-weighted samples, whole-buffer only.
    weighted = k_weight(buffer).samples
    csum = np.cumsum(np.square(weighted), axis=0)
    csum = np.vstack([np.zeros((1, csum.shape[1])), csum])
    starts = np.arange(0, buffer.n_frames - window_samples + 1, hop_samples)
    block_sums = csum[starts + window_samples] - csum[starts]
    z = (block_sums / window_samples) @ channel_weight_vector(buffer.layout, weights)
    times = (starts + window_samples / 2.0) / rate
    return LoudnessTimeline(times, lufs_from_energy(z), window, hop, role)


def momentary(buffer: AudioBuffer, config: MeterConfig = DEFAULT_METER_CONFIG,
              role: str = "mix") -> LoudnessTimeline:
    """Loudness over a moving 400 ms window (default hop 100 ms)."""
    return block_loudness(buffer, config.momentary_window, config.momentary_hop,
                          config.channel_weights, role)


def short_term(buffer: AudioBuffer, config: MeterConfig = DEFAULT_METER_CONFIG,
               role: str = "mix") -> LoudnessTimeline:
    """Loudness over a moving 3 s window."""
    return block_loudness(buffer, config.short_term_window, config.short_term_hop,
                          config.channel_weights, role)


def gated_loudness(block_energies: np.ndarray,
                   absolute_gate: float = ABSOLUTE_GATE_LUFS,
                   relative_gate_offset: float = RELATIVE_GATE_LU) -> float | None:
    """Two-stage gated loudness of a set of block energies.

    Stage one discards blocks at or below the absolute gate; stage two
    discards blocks at or below (energy-mean loudness of the survivors +
    ``relative_gate_offset``). Returns ``None`` when every block is gated
    out ("below gate" — not a number).
    """
    z = np.asarray(block_energies, dtype=np.float64)
    if z.size == 0:
        return None
    loud = lufs_from_energy(z)
    stage1 = z[loud > absolute_gate]
    if stage1.size == 0:
        return None
    relative_gate = lufs_from_energy(np.mean(stage1)) + relative_gate_offset
    stage2 = z[(loud > absolute_gate) & (loud > relative_gate)]
    if stage2.size == 0:
        return None
    return float(lufs_from_energy(np.mean(stage2)))


def ungated_loudness(block_energies: np.ndarray) -> float | None:
    """Energy-mean loudness of all blocks, no gating; None on silence/empty."""
    z = np.asarray(block_energies, dtype=np.float64)
    if z.size == 0:
        return None
    mean = float(np.mean(z))
    if mean <= 0.0:
        return None
    return float(lufs_from_energy(mean))


def integrated_loudness(buffer: AudioBuffer,
                        config: MeterConfig = DEFAULT_METER_CONFIG) -> float | None:
    """Gated loudness of the whole program, built from 400 ms blocks."""
    if buffer.duration < config.momentary_window:
        raise ProgramTooShortError(
            f"program too short: {buffer.duration:.3f} s is below the "
            f"{config.momentary_window:g} s gating block"
        )
    series = _series_for(buffer, config.momentary_hop, config.channel_weights)
    z = series.block_energies(config.momentary_window)
    return gated_loudness(z, config.absolute_gate, config.relative_gate_offset)


# ---------------------------------------------------------------------------
# Peaks

@dataclass
class PeakReport:
    """Highest sample and inter-sample level of a program."""

    sample_peak: float  # dBFS
    true_peak: float    # dBTP


def _db(amplitude: float) -> float:
    return 20.0 * math.log10(amplitude) if amplitude > 0 else float("-inf")


def true_peak_oversampling(sample_rate: int) -> int:
    """Oversampling factor: at least 4x, enough to reach 192 kHz."""
    return max(4, -(-192000 // sample_rate))


def _true_peak_kernel(factor: int) -> np.ndarray:
    # 12 taps per phase; cutoff pulled in to keep images down with a short
    # kernel. Gain ``factor`` preserves amplitude through zero-stuffing.
    n_taps = 12 * factor + 1
    return signal.firwin(n_taps, 0.85 / factor, window=("kaiser", 7.0)) * factor


class TruePeakTracker:
    """Streaming sample-peak and oversampled true-peak detector.

    The interpolated maximum is found exactly (identical to running the
    polyphase interpolator over the whole signal) but cheaply: a region can
    only host an oversampled value above the current best when it contains
    a sample exceeding best / ||kernel||_1, so provably-quiet stretches are
    skipped without being filtered.
    """

    def __init__(self, sample_rate: int, n_channels: int):
        self.factor = true_peak_oversampling(sample_rate)
        self._kernel = _true_peak_kernel(self.factor)
        self._k_in = -(-len(self._kernel) // self.factor)  # input samples per output
        self._l1 = float(np.max(
            [np.sum(np.abs(self._kernel[p::self.factor])) for p in range(self.factor)]
        ))
        self._tail = np.zeros((self._k_in - 1, n_channels))
        self._sample_peak = 0.0
        self._true_peak = 0.0

    def push(self, chunk: np.ndarray):
        if chunk.shape[0] == 0:
            return
        self._sample_peak = max(self._sample_peak, float(np.max(np.abs(chunk))))
        ext = np.vstack([self._tail, chunk])
        self._scan(ext)
        keep = self._k_in - 1
        self._tail = ext[-keep:] if keep else np.empty((0, chunk.shape[1]))

    def _scan(self, ext: np.ndarray):
        k = self._k_in
        threshold = max(self._true_peak, self._sample_peak) / self._l1
        if threshold <= 0.0:
            threshold = np.finfo(np.float64).tiny  # all-silence: nothing to refine
        hot = np.max(np.abs(ext), axis=1) >= threshold
        if not hot.any():
            return
        if np.count_nonzero(hot) * 2 >= hot.size:
            self._interpolate(ext)
            return
        edges = np.flatnonzero(np.diff(np.concatenate(([0], hot.view(np.int8), [0]))))
        for a, b in zip(edges[::2], edges[1::2]):  # runs of hot samples [a, b)
            lo = max(0, a - k + 1)
            hi = min(ext.shape[0], b + k - 1)
            self._interpolate(ext[lo:hi])

    def _interpolate(self, x: np.ndarray):
        if x.shape[0] < self._k_in:
            return
        y = signal.upfirdn(self._kernel, x, up=self.factor, axis=0)
        full = y[len(self._kernel) - 1:(x.shape[0] - 1) * self.factor + 1]
        if full.size:
            self._true_peak = max(self._true_peak, float(np.max(np.abs(full))))

    def result(self) -> PeakReport:
        # flush: trailing windows that slide past the end of the signal
        flush = np.vstack([self._tail, np.zeros((self._k_in - 1, self._tail.shape[1]))])
        self._scan(flush)
        self._tail = flush[-(self._k_in - 1):]
        true_peak = max(self._true_peak, self._sample_peak)
        return PeakReport(sample_peak=_db(self._sample_peak), true_peak=_db(true_peak))


def peaks(buffer: AudioBuffer) -> PeakReport:
    """Sample peak (dBFS) and >=4x-oversampled true peak (dBTP)."""
    tracker = TruePeakTracker(buffer.sample_rate, buffer.n_channels)
    tracker.push(buffer.samples)
    return tracker.result()
