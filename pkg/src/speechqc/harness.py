"""Experiment harness: controlled mixing, bias/relation curves, separator MAE.

The corpus is desk-scale: either user-provided stem folders
(``pairs/<id>/speech.wav`` + ``background.wav``) or deterministic synthetic
pairs (speech-shaped modulated noise against stationary backgrounds).
Curve shapes are the point; every result is reproducible from (corpus,
grid, seed).
"""
from __future__ import annotations

import logging
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .activity import SpeechActivity
from .audio import AudioBuffer, StemSet, mix_stems, STEREO_LAYOUT
from .errors import HarnessError
from .measures import (
    _activity_from_series,
    _sbld_integrated,
    _speech_gated_loudness,
    _speech_loudness,
    _st_values,
    _micro_times,
    _raw_local_sbld,
)
from .meter import gated_loudness
from .pipeline import AnalysisConfig, DEFAULT_ANALYSIS_CONFIG, run_pipeline
from .separator import SeparatorSpec, separate
from .wavio import read_wav, write_wav

log = logging.getLogger(__name__)

SPEECH_ONLY = "speech_only"
MAE_MEASURES = ("integrated_sl", "integrated_sbld", "short_term_sl", "short_term_sbld")


# ---------------------------------------------------------------------------
# Synthetic stems and corpus handling

# Classic pink-noise shaping filter (white in, ~1/f out).
_PINK_B = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
_PINK_A = [1.0, -2.494956002, 2.017265875, -0.522189400]


def _normalize_integrated(buffer: AudioBuffer, target_lufs: float,
                          config: AnalysisConfig) -> AudioBuffer:
    prog = run_pipeline(speech=buffer, config=config)
    loudness = _speech_loudness(prog.series["speech"], config)
    if loudness is None:
        raise HarnessError("generated signal fell below the loudness gate")
    return buffer.gain_db(target_lufs - loudness)


def make_speech_like(duration: float = 10.0, sample_rate: int = 48000,
                     seed: int = 0, level_lufs: float = -23.0,
                     config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> AudioBuffer:
    """Speech-shaped noise with syllabic-rate level modulation, centre-panned."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5BEEC4, seed]))
    n = round(duration * sample_rate)
    noise = rng.standard_normal(n)
    # spectral tilt toward the speech range: pink it, then band-limit
    shaped = signal.lfilter(_PINK_B, _PINK_A, noise)
    sos = signal.butter(2, [120.0, 6000.0], btype="bandpass", fs=sample_rate, output="sos")
    shaped = signal.sosfilt(sos, shaped)
    t = np.arange(n) / sample_rate
    f1 = 3.0 + rng.uniform(0.0, 2.0)
    f2 = 0.4 + rng.uniform(0.0, 0.4)
    syllables = 0.5 + 0.5 * np.sin(2 * np.pi * f1 * t + rng.uniform(0, 2 * np.pi))
    phrases = 0.6 + 0.4 * np.sin(2 * np.pi * f2 * t + rng.uniform(0, 2 * np.pi))
    envelope = 0.15 + 0.85 * syllables * phrases
    mono = shaped * envelope
    stereo = np.repeat(mono[:, np.newaxis], 2, axis=1)
    buffer = AudioBuffer(stereo / np.max(np.abs(stereo)) * 0.5, sample_rate, STEREO_LAYOUT)
    return _normalize_integrated(buffer, level_lufs, config)


_BACKGROUND_KINDS = ("pink", "white", "lowpass")


def make_background_like(duration: float = 10.0, sample_rate: int = 48000,
                         seed: int = 0, level_lufs: float = -23.0,
                         kind: str | None = None,
                         config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> AudioBuffer:
    """Stationary noise bed (music-and-effects stand-in), decorrelated stereo."""
    rng = np.random.default_rng(np.random.SeedSequence([0xBA0660, seed]))
    if kind is None:
        kind = _BACKGROUND_KINDS[seed % len(_BACKGROUND_KINDS)]
    n = round(duration * sample_rate)
    channels = []
    for _ in range(2):
        noise = rng.standard_normal(n)
        if kind == "pink":
            noise = signal.lfilter(_PINK_B, _PINK_A, noise)
        elif kind == "lowpass":
            sos = signal.butter(2, 800.0, btype="lowpass", fs=sample_rate, output="sos")
            noise = signal.sosfilt(sos, noise)
        elif kind != "white":
            raise ValueError(f"unknown background kind {kind!r}")
        channels.append(noise)
    t = np.arange(n) / sample_rate
    sway = 10 ** (2.0 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi)) / 20.0)
    stereo = np.stack(channels, axis=1) * sway[:, np.newaxis]
    buffer = AudioBuffer(stereo / np.max(np.abs(stereo)) * 0.5, sample_rate, STEREO_LAYOUT)
    return _normalize_integrated(buffer, level_lufs, config)


@dataclass(frozen=True)
class PairSpec:
    """One corpus entry: file-backed or synthesised on demand."""

    pair_id: str
    speech_path: str | None = None
    background_path: str | None = None
    seed: int | None = None
    duration: float = 10.0
    sample_rate: int = 48000

    def load(self, config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG
             ) -> tuple[AudioBuffer, AudioBuffer]:
        if self.speech_path is not None:
            return read_wav(self.speech_path), read_wav(self.background_path)
        return (
            make_speech_like(self.duration, self.sample_rate, seed=self.seed,
                             config=config),
            make_background_like(self.duration, self.sample_rate, seed=self.seed,
                                 config=config),
        )


def synthetic_corpus(n_pairs: int, seed: int = 0, duration: float = 10.0,
                     sample_rate: int = 48000) -> list[PairSpec]:
    return [
        PairSpec(pair_id=f"synth{index:03d}", seed=seed * 10_000 + index,
                 duration=duration, sample_rate=sample_rate)
        for index in range(n_pairs)
    ]


def load_corpus(root: str) -> list[PairSpec]:
    """Read a ``pairs/<id>/speech.wav`` + ``background.wav`` folder layout."""
    pairs_dir = Path(root) / "pairs"
    if not pairs_dir.is_dir():
        raise HarnessError(f"no pairs/ directory under {root}")
    pairs = []
    for entry in sorted(pairs_dir.iterdir()):
        speech, background = entry / "speech.wav", entry / "background.wav"
        if not entry.is_dir():
            continue
        if not speech.exists() or not background.exists():
            raise HarnessError(f"{entry}: needs both speech.wav and background.wav")
        pairs.append(PairSpec(pair_id=entry.name, speech_path=str(speech),
                              background_path=str(background)))
    if not pairs:
        raise HarnessError(f"no stem pairs found under {pairs_dir}")
    return pairs


def generate_corpus(root: str, n_pairs: int, seed: int = 0, duration: float = 10.0,
                    sample_rate: int = 48000) -> list[PairSpec]:
    """Materialise a synthetic corpus to disk in the standard folder layout."""
    for spec in synthetic_corpus(n_pairs, seed, duration, sample_rate):
        speech, background = spec.load()
        pair_dir = Path(root) / "pairs" / spec.pair_id
        pair_dir.mkdir(parents=True, exist_ok=True)
        write_wav(str(pair_dir / "speech.wav"), speech, fmt="float32")
        write_wav(str(pair_dir / "background.wav"), background, fmt="float32")
    return load_corpus(root)


# ---------------------------------------------------------------------------
# Controlled mixing

@dataclass(frozen=True)
class MixSpec:
    """Target mixing condition for one synthetic program."""

    target_sbld: float
    align: str = "truncate"  # truncate | pad on length mismatch
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.target_sbld):
            raise ValueError("target SBLD must be finite")
        if self.align not in ("truncate", "pad"):
            raise ValueError(f"align must be truncate|pad, got {self.align!r}")


def oracle_activity(speech: AudioBuffer,
                    config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> SpeechActivity:
    """Ground-truth-style activity from a clean stem: presence only, no SBLD floor."""
    cfg = replace(config, sbld_floor=None)
    prog = run_pipeline(speech=speech, config=cfg)
    activity = _activity_from_series(prog, cfg)
    if activity is None:
        raise HarnessError("could not derive activity from the speech stem")
    return activity


def mix_at_sbld(speech: AudioBuffer, background: AudioBuffer, spec: MixSpec,
                config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> StemSet:
    """Scale the background so the measured integrated SBLD hits the target.

    The gain is closed-form: with the background side of SBLD being an
    ungated energy mean over the speech-active region, a broadband gain of
    g dB moves SBLD by exactly -g LU.
    """
    if spec.align == "truncate":
        n = min(speech.n_frames, background.n_frames)
        speech, background = speech.pad_or_truncate(n), background.pad_or_truncate(n)
    else:
        n = max(speech.n_frames, background.n_frames)
        speech, background = speech.pad_or_truncate(n), background.pad_or_truncate(n)
    solve_cfg = replace(config, gated_background=False)
    activity = oracle_activity(speech, solve_cfg)
    if activity.is_empty:
        raise HarnessError("speech stem has no active passages")
    prog = run_pipeline(speech=speech, background=background, config=solve_cfg)
    current = _sbld_integrated(prog.series["speech"], prog.series["background"],
                               activity, solve_cfg)
    if current is None:
        raise HarnessError("speech stem below gate; cannot set a mixing ratio")
    if abs(current) >= solve_cfg.sbld_cap:
        raise HarnessError("background is silent over the speech region; "
                           "cannot set a mixing ratio")
    background = background.gain_db(current - spec.target_sbld)
    return StemSet(mix=mix_stems(speech, background), speech=speech,
                   background=background)


# ---------------------------------------------------------------------------
# Curves

@dataclass
class CurveTable:
    """Mean +/- std of one measure across the corpus, per grid point."""

    name: str
    grid: list[float]
    mean: list[float]
    std: list[float]
    n_pairs: list[int]
    failures: list[tuple[str, str]] = field(default_factory=list)


def _program_loudness(prog, cfg) -> float | None:
    z = prog.series["mix"].block_energies(cfg.meter.momentary_window,
                                          cfg.meter.momentary_hop)
    return gated_loudness(z, cfg.meter.absolute_gate, cfg.meter.relative_gate_offset)


def _bias_points(pair: PairSpec, sbld_grid: tuple[float, ...],
                 config: AnalysisConfig) -> list[float]:
    """Speech-gated-loudness bias (gated minus true SL) per grid point."""
    speech, background = pair.load(config)
    points = []
    for target in sbld_grid:
        stems = mix_at_sbld(speech, background, MixSpec(target), config)
        prog = run_pipeline(mix=stems.mix, speech=stems.speech,
                            background=stems.background, config=config)
        loudness = _program_loudness(prog, config)
        if loudness is None:
            raise HarnessError(f"{pair.pair_id}: mix below gate at SBLD {target}")
        gain = -23.0 - loudness  # fixed program loudness for the bias protocol
        scaled = StemSet(mix=stems.mix.gain_db(gain), speech=stems.speech.gain_db(gain),
                         background=stems.background.gain_db(gain))
        activity = oracle_activity(scaled.speech, config)
        prog = run_pipeline(mix=scaled.mix, speech=scaled.speech,
                            background=scaled.background, config=config)
        gated = _speech_gated_loudness(prog.series["mix"], activity, config)
        sl = _speech_loudness(prog.series["speech"], config)
        if gated is None or sl is None:
            raise HarnessError(f"{pair.pair_id}: unmeasurable at SBLD {target}")
        points.append(gated - sl)
    return points


def _ldr_points(pair: PairSpec, sbld_grid: tuple[float, ...],
                config: AnalysisConfig) -> list[float]:
    """LDR (program minus speech loudness) per grid point."""
    speech, background = pair.load(config)
    points = []
    for target in sbld_grid:
        stems = mix_at_sbld(speech, background, MixSpec(target), config)
        prog = run_pipeline(mix=stems.mix, speech=stems.speech,
                            background=stems.background, config=config)
        loudness = _program_loudness(prog, config)
        sl = _speech_loudness(prog.series["speech"], config)
        if loudness is None or sl is None:
            raise HarnessError(f"{pair.pair_id}: unmeasurable at SBLD {target}")
        points.append(loudness - sl)
    return points


_CURVE_WORKERS = {"bias": _bias_points, "ldr": _ldr_points}


def _curve_task(args):
    kind, pair, grid, config = args
    return _CURVE_WORKERS[kind](pair, grid, config)


def _run_curve(kind: str, name: str, pairs: list[PairSpec], sbld_grid: list[float],
               config: AnalysisConfig, jobs: int, min_success: float = 0.8) -> CurveTable:
    if not pairs:
        raise HarnessError("corpus is empty")
    grid = tuple(float(g) for g in sbld_grid)
    tasks = [(kind, pair, grid, config) for pair in pairs]
    results: list[list[float] | None] = []
    failures: list[tuple[str, str]] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = list(pool.map(_curve_task_safe, tasks))
    else:
        futures = [_curve_task_safe(task) for task in tasks]
    for pair, outcome in zip(pairs, futures):
        points, error = outcome
        if error is not None:
            failures.append((pair.pair_id, error))
            results.append(None)
        else:
            results.append(points)
    ok = [r for r in results if r is not None]
    if len(ok) < min_success * len(pairs):
        raise HarnessError(
            f"only {len(ok)}/{len(pairs)} pairs succeeded "
            f"(need {min_success:.0%}): {failures[:3]}")
    matrix = np.asarray(ok)
    return CurveTable(
        name=name,
        grid=list(grid),
        mean=[float(v) for v in matrix.mean(axis=0)],
        std=[float(v) for v in matrix.std(axis=0)],
        n_pairs=[len(ok)] * len(grid),
        failures=failures,
    )


def _curve_task_safe(args):
    try:
        return _curve_task(args), None
    except Exception as exc:  # worker boundary: report, do not kill the run
        return None, f"{type(exc).__name__}: {exc}"


def gated_bias_curve(pairs: list[PairSpec], sbld_grid: list[float],
                     config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG,
                     jobs: int = 1) -> CurveTable:
    """How far speech-gated loudness overshoots true SL, per mixing ratio.

    Mixes are normalised to -23 LUFS program loudness and gated with
    activity derived from the clean stem, so the bias isolates the effect
    of background energy inside speech-active blocks.
    """
    return _run_curve("bias", "speech_gated_bias", pairs, sbld_grid, config, jobs)


def ldr_sbld_curve(pairs: list[PairSpec], sbld_grid: list[float],
                   config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG,
                   jobs: int = 1) -> CurveTable:
    """Loudness-to-dialogue ratio as a function of the mixing ratio."""
    return _run_curve("ldr", "ldr_vs_sbld", pairs, sbld_grid, config, jobs)


# ---------------------------------------------------------------------------
# Separator evaluation

@dataclass
class MaeEntry:
    condition: str
    measure: str
    mae: float | None
    std: float | None
    n: int


@dataclass
class MaeReport:
    """Per-condition and pooled estimation error of a separator."""

    conditions: list[str]
    entries: list[MaeEntry]
    failures: list[tuple[str, str, str]] = field(default_factory=list)  # pair, condition, error

    def entry(self, condition: str, measure: str) -> MaeEntry | None:
        for e in self.entries:
            if e.condition == condition and e.measure == measure:
                return e
        return None


def condition_label(condition) -> str:
    if isinstance(condition, str):
        return condition
    return f"sbld_{condition:+g}"


def _truth_and_estimate(pair: PairSpec, condition, separator: SeparatorSpec,
                        config: AnalysisConfig) -> dict[str, float]:
    speech, background = pair.load(config)
    if condition == SPEECH_ONLY:
        silence = background.with_samples(np.zeros_like(background.samples))
        n = min(speech.n_frames, silence.n_frames)
        stems = StemSet(mix=speech.pad_or_truncate(n),
                        speech=speech.pad_or_truncate(n),
                        background=silence.pad_or_truncate(n))
    else:
        stems = mix_at_sbld(speech, background, MixSpec(float(condition)), config)

    def measures_for(speech_buf: AudioBuffer, background_buf: AudioBuffer):
        prog = run_pipeline(speech=speech_buf, background=background_buf, config=config)
        activity = _activity_from_series(prog, config)
        sl = _speech_loudness(prog.series["speech"], config)
        sbld = None
        if activity is not None and not activity.is_empty:
            sbld = _sbld_integrated(prog.series["speech"], prog.series["background"],
                                    activity, config)
        st_speech = _st_values(prog.series["speech"], config)
        raw_sbld = _raw_local_sbld(st_speech, _st_values(prog.series["background"], config))
        local = np.full(st_speech.shape, np.nan)
        if activity is not None:
            mask = activity.mask
            local[mask] = np.clip(raw_sbld[mask], -config.sbld_cap, config.sbld_cap)
        return sl, sbld, st_speech, local

    sl_true, sbld_true, st_true, local_true = measures_for(stems.speech, stems.background)
    # Expose the exact condition stems so oracle-style stubs can return the
    # ground truth bit-for-bit (protocol sanity anchor: MAE must then be 0).
    with tempfile.TemporaryDirectory(prefix="speechqc-truth-") as truth_dir:
        truth = Path(truth_dir)
        write_wav(str(truth / "speech.wav"), stems.speech, fmt="float64")
        write_wav(str(truth / "background.wav"), stems.background, fmt="float64")
        env = {
            "SPEECHQC_TRUTH_SPEECH": str(truth / "speech.wav"),
            "SPEECHQC_TRUTH_BACKGROUND": str(truth / "background.wav"),
            "SPEECHQC_PAIR_ID": pair.pair_id,
            "SPEECHQC_CONDITION": condition_label(condition),
        }
        separated = separate(stems.mix, separator, env=env)
    sl_est, sbld_est, st_est, local_est = measures_for(separated.speech, separated.background)

    errors: dict[str, float] = {}
    if sl_true is not None and sl_est is not None:
        errors["integrated_sl"] = abs(sl_est - sl_true)
    if condition != SPEECH_ONLY and sbld_true is not None and sbld_est is not None:
        errors["integrated_sbld"] = abs(sbld_est - sbld_true)
    finite = np.isfinite(st_true) & np.isfinite(st_est)
    if finite.any():
        errors["short_term_sl"] = float(np.mean(np.abs(st_est[finite] - st_true[finite])))
    if condition != SPEECH_ONLY:
        defined = ~np.isnan(local_true) & ~np.isnan(local_est)
        if defined.any():
            errors["short_term_sbld"] = float(
                np.mean(np.abs(local_est[defined] - local_true[defined])))
    return errors


def _mae_task_safe(args):
    pair, condition, separator, config = args
    try:
        return _truth_and_estimate(pair, condition, separator, config), None
    except Exception as exc:  # separator or measurement failure: exclude the pair
        return None, f"{type(exc).__name__}: {exc}"


def evaluate_separator(pairs: list[PairSpec], separator: SeparatorSpec,
                       conditions: list, config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG,
                       jobs: int = 1) -> MaeReport:
    """MAE of separator-based SL/SBLD estimates against ground-truth stems.

    ``conditions`` mixes SBLD targets (numbers) with the literal
    ``"speech_only"``; an ``"overall"`` row pools every condition.
    """
    if not pairs:
        raise HarnessError("corpus is empty")
    labels = [condition_label(c) for c in conditions]
    tasks = [(pair, condition, separator, config)
             for condition in conditions for pair in pairs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_mae_task_safe, tasks))
    else:
        outcomes = [_mae_task_safe(task) for task in tasks]

    by_condition: dict[str, dict[str, list[float]]] = {
        label: {m: [] for m in MAE_MEASURES} for label in labels}
    pooled: dict[str, list[float]] = {m: [] for m in MAE_MEASURES}
    failures = []
    index = 0
    for condition, label in zip(conditions, labels):
        for pair in pairs:
            errors, failure = outcomes[index]
            index += 1
            if failure is not None:
                failures.append((pair.pair_id, label, failure))
                continue
            for measure, value in errors.items():
                by_condition[label][measure].append(value)
                pooled[measure].append(value)

    entries = []
    for label in labels:
        for measure in MAE_MEASURES:
            values = by_condition[label][measure]
            entries.append(_mae_entry(label, measure, values))
    for measure in MAE_MEASURES:
        entries.append(_mae_entry("overall", measure, pooled[measure]))
    return MaeReport(conditions=labels + ["overall"], entries=entries, failures=failures)


def _mae_entry(condition: str, measure: str, values: list[float]) -> MaeEntry:
    if not values:
        return MaeEntry(condition, measure, None, None, 0)
    arr = np.asarray(values)
    return MaeEntry(condition, measure, float(arr.mean()), float(arr.std()), len(values))
