"""Speech-centric loudness measures and the combined program report.

Macroscopic measures summarise the whole program: integrated loudness,
LRA, peaks, speech loudness (SL), speech-gated loudness, LDR (program
minus speech loudness), and the integrated speech-to-background loudness
difference (SBLD) over speech-active passages.

Microscopic measures locate problems in time: the speech loudness
deviation SLD (short-term speech loudness minus integrated SL) and local
SBLD (short-term speech minus short-term background), evaluated on a
hop-aligned grid. Hops where either falls below its threshold while speech
is active are critical passages.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .activity import ActivitySidecar, SpeechActivity
from .audio import AudioBuffer, StemSet
from .errors import AlignmentError, ProgramTooShortError
from .meter import (
    BlockSeries,
    LoudnessTimeline,
    PeakReport,
    gated_loudness,
    lufs_from_energy,
    ungated_loudness,
)
from .dynamics import LraResult, lra_from_values
from .pipeline import (
    AnalysisConfig,
    DEFAULT_ANALYSIS_CONFIG,
    ProgramSeries,
    run_pipeline,
)

NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# Series plumbing shared by the operations below

def _st_values(series: BlockSeries, cfg: AnalysisConfig) -> np.ndarray:
    return lufs_from_energy(
        series.block_energies(cfg.meter.short_term_window, cfg.micro_hop)
    )


def _micro_times(series: BlockSeries, cfg: AnalysisConfig) -> np.ndarray:
    return series.block_times(cfg.meter.short_term_window, cfg.micro_hop)


def _aux_values(series: BlockSeries, cfg: AnalysisConfig, n_micro: int) -> np.ndarray:
    """Auxiliary-window speech loudness aligned to the microscopic grid."""
    z_all = series.block_energies(cfg.aux_window)  # engine-hop resolution
    rate = series.sample_rate
    offset_samples = round(
        (cfg.meter.short_term_window - cfg.aux_window) / 2 * rate
    )
    offset = offset_samples // series.hop_samples
    step = round(cfg.micro_hop * rate) // series.hop_samples
    aligned = z_all[offset::step][:n_micro]
    if aligned.shape[0] != n_micro:
        raise AssertionError("aux series shorter than the microscopic grid")
    return lufs_from_energy(aligned)


def _raw_local_sbld(st_speech: np.ndarray, st_background: np.ndarray) -> np.ndarray:
    """Uncapped short-term speech minus background; silence-aware."""
    with np.errstate(invalid="ignore"):
        raw = st_speech - st_background
    # -inf minus -inf: silent speech dominates (no speech -> -inf)
    both_silent = np.isneginf(st_speech) & np.isneginf(st_background)
    raw[both_silent] = NEG_INF
    return raw


def _momentary_energies(series: BlockSeries, cfg: AnalysisConfig) -> tuple[np.ndarray, np.ndarray]:
    z = series.block_energies(cfg.meter.momentary_window, cfg.meter.momentary_hop)
    t = series.block_times(cfg.meter.momentary_window, cfg.meter.momentary_hop)
    return t, z


def _activity_from_series(prog: ProgramSeries, cfg: AnalysisConfig) -> SpeechActivity | None:
    """Derive speech activity from the speech stem (and background, if any)."""
    if not prog.has("speech"):
        return None
    speech = prog.series["speech"]
    times = _micro_times(speech, cfg)
    if times.size == 0:
        return None
    aux = _aux_values(speech, cfg, times.size)
    mask = aux >= cfg.activation_threshold
    if cfg.sbld_floor is not None and prog.has("background"):
        raw = _raw_local_sbld(_st_values(speech, cfg),
                              _st_values(prog.series["background"], cfg))
        mask &= raw >= cfg.sbld_floor
    return SpeechActivity(times=times, mask=mask, hop=cfg.micro_hop, source="derived")


def _quantize_activity(activity, times: np.ndarray, hop: float) -> SpeechActivity:
    if isinstance(activity, SpeechActivity):
        return SpeechActivity.from_intervals(activity.intervals, times, hop,
                                             source=activity.source)
    if isinstance(activity, ActivitySidecar):
        return SpeechActivity.from_intervals(activity.intervals, times, hop,
                                             source=activity.source)
    return SpeechActivity.from_intervals(list(activity), times, hop, source="external")


# ---------------------------------------------------------------------------
# Data types

@dataclass
class MicroTimelines:
    """Hop-aligned local measures; all series share the same time base."""

    times: np.ndarray
    sld: np.ndarray                  # short-term speech minus integrated SL
    local_sbld: np.ndarray           # NaN where speech is inactive/unavailable
    aux_speech_loudness: np.ndarray  # LUFS over the auxiliary window
    hop: float


@dataclass
class CriticalPassages:
    """Speech passages likely to be hard to understand, with why."""

    intervals: list[tuple[float, float, str]]  # (start_s, end_s, reason)
    critical_percentage: float | None          # of speech-active time
    n_critical_hops: int = 0
    n_active_hops: int = 0


@dataclass
class MacroReport:
    """Program-level summary: every headline measure or an explicit None."""

    program_loudness: float | None = None
    program_lra: float | None = None
    max_momentary: float | None = None
    max_short_term: float | None = None
    sample_peak: float | None = None
    true_peak: float | None = None
    speech_gated_loudness: float | None = None
    speech_gated_lra: float | None = None
    speech_loudness: float | None = None
    speech_lra: float | None = None
    ldr: float | None = None
    sbld_integrated: float | None = None
    critical_percentage: float | None = None


@dataclass
class AnalysisResult:
    """Full outcome of one program analysis."""

    macro: MacroReport
    micro: MicroTimelines | None
    critical: CriticalPassages | None
    activity: SpeechActivity | None
    mix_momentary: LoudnessTimeline | None
    mix_short_term: LoudnessTimeline | None
    program_lra_detail: LraResult | None
    speech_lra_detail: LraResult | None
    reasons: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    sample_rate: int = 0
    n_frames: int = 0
    config: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate if self.sample_rate else 0.0


# ---------------------------------------------------------------------------
# Operations on audio buffers

def detect_activity(speech: AudioBuffer,
                    aux_window: float = 1.0,
                    activation_threshold: float = -65.0,
                    sbld_floor: float | None = -10.0,
                    local_sbld: np.ndarray | None = None,
                    config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> SpeechActivity:
    """Hop-aligned speech activity from the speech stem.

    Active where loudness over the auxiliary window reaches the activation
    threshold; hops whose supplied local SBLD falls below ``sbld_floor`` are
    treated as having no usable speech.
    """
    cfg = replace(config, aux_window=aux_window,
                  activation_threshold=activation_threshold, sbld_floor=sbld_floor)
    prog = run_pipeline(speech=speech, config=cfg)
    speech_series = prog.series["speech"]
    times = _micro_times(speech_series, cfg)
    if times.size == 0:
        raise ProgramTooShortError(
            f"program too short: {prog.duration:.3f} s is below the "
            f"{cfg.meter.short_term_window:g} s short-term window"
        )
    aux = _aux_values(speech_series, cfg, times.size)
    mask = aux >= activation_threshold
    if local_sbld is not None and sbld_floor is not None:
        local_sbld = np.asarray(local_sbld, dtype=np.float64)
        if local_sbld.shape != mask.shape:
            raise AlignmentError("local_sbld series does not match the activity grid")
        with np.errstate(invalid="ignore"):
            mask &= local_sbld >= sbld_floor
    return SpeechActivity(times=times, mask=mask, hop=cfg.micro_hop, source="derived")


def speech_gated_loudness(mix: AudioBuffer, activity: SpeechActivity,
                          config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> float | None:
    """Integrated loudness of the mix over speech-active blocks only.

    Standard two-stage gating applies on top of the activity selection.
    Returns None when no blocks are active ("no speech").
    """
    prog = run_pipeline(mix=mix, config=config)
    return _speech_gated_loudness(prog.series["mix"], activity, config)


def _speech_gated_loudness(mix_series: BlockSeries, activity: SpeechActivity,
                           cfg: AnalysisConfig) -> float | None:
    times, z = _momentary_energies(mix_series, cfg)
    selected = activity.active_at(times)
    if not selected.any():
        return None
    return gated_loudness(z[selected], cfg.meter.absolute_gate,
                          cfg.meter.relative_gate_offset)


def speech_loudness(speech: AudioBuffer,
                    config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> float | None:
    """Integrated loudness of the (clean or separated) speech stem."""
    prog = run_pipeline(speech=speech, config=config)
    return _speech_loudness(prog.series["speech"], config)


def _speech_loudness(speech_series: BlockSeries, cfg: AnalysisConfig) -> float | None:
    _, z = _momentary_energies(speech_series, cfg)
    if cfg.speech_gating == "ungated":
        return ungated_loudness(z)
    return gated_loudness(z, cfg.meter.absolute_gate, cfg.meter.relative_gate_offset)


def speech_lra(speech: AudioBuffer,
               config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> LraResult | None:
    """Loudness range of the speech stem."""
    prog = run_pipeline(speech=speech, config=config)
    series = prog.series["speech"]
    values = lufs_from_energy(
        series.block_energies(config.meter.short_term_window, config.lra_hop))
    if values.size == 0:
        raise ProgramTooShortError(
            f"program too short: {prog.duration:.3f} s is below the "
            f"{config.meter.short_term_window:g} s short-term window")
    return lra_from_values(values)


def ldr(program_loudness: float | None, sl: float | None) -> float | None:
    """Loudness-to-dialogue ratio: program loudness minus speech loudness."""
    if program_loudness is None or sl is None:
        return None
    return program_loudness - sl


def sbld_integrated(speech: AudioBuffer, background: AudioBuffer,
                    activity: SpeechActivity,
                    config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> float | None:
    """Integrated speech minus background loudness over speech-active passages.

    The speech side uses standard gating on the active blocks; the
    background side is the energy mean over the same blocks (two-stage
    gated instead when ``config.gated_background``). A silent background
    caps the result at +``config.sbld_cap``.
    """
    prog = run_pipeline(speech=speech, background=background, config=config)
    return _sbld_integrated(prog.series["speech"], prog.series["background"],
                            activity, config)


def _sbld_integrated(speech_series: BlockSeries, background_series: BlockSeries,
                     activity: SpeechActivity, cfg: AnalysisConfig) -> float | None:
    times, z_speech = _momentary_energies(speech_series, cfg)
    _, z_background = _momentary_energies(background_series, cfg)
    selected = activity.active_at(times)
    if not selected.any():
        return None
    speech_side = gated_loudness(z_speech[selected], cfg.meter.absolute_gate,
                                 cfg.meter.relative_gate_offset)
    if speech_side is None:
        return None
    if cfg.gated_background:
        background_side = gated_loudness(z_background[selected], cfg.meter.absolute_gate,
                                         cfg.meter.relative_gate_offset)
    else:
        background_side = ungated_loudness(z_background[selected])
    if background_side is None:
        return cfg.sbld_cap
    return float(np.clip(speech_side - background_side, -cfg.sbld_cap, cfg.sbld_cap))


def micro_timelines(speech: AudioBuffer, background: AudioBuffer | None = None,
                    config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> MicroTimelines:
    """Local measures: SLD, local SBLD, and auxiliary speech loudness."""
    prog = run_pipeline(speech=speech, background=background, config=config)
    if prog.duration < config.meter.short_term_window:
        raise ProgramTooShortError(
            f"program too short: {prog.duration:.3f} s is below the "
            f"{config.meter.short_term_window:g} s short-term window")
    activity = _activity_from_series(prog, config)
    micro, _ = _micro_from_series(prog, activity, config)
    return micro


def _micro_from_series(prog: ProgramSeries, activity: SpeechActivity | None,
                       cfg: AnalysisConfig) -> tuple[MicroTimelines | None, str | None]:
    if not prog.has("speech"):
        return None, "speech stem unavailable"
    speech = prog.series["speech"]
    times = _micro_times(speech, cfg)
    if times.size == 0:
        return None, (f"program shorter than the {cfg.meter.short_term_window:g} s "
                      "short-term window")
    st_speech = _st_values(speech, cfg)
    aux = _aux_values(speech, cfg, times.size)
    sl = _speech_loudness(speech, cfg)
    if sl is None:
        sld = np.full(times.shape, np.nan)
    else:
        sld = st_speech - sl
    local_sbld = np.full(times.shape, np.nan)
    if prog.has("background"):
        raw = _raw_local_sbld(st_speech, _st_values(prog.series["background"], cfg))
        defined = activity.mask if activity is not None else np.ones(times.shape, bool)
        local_sbld[defined] = np.clip(raw[defined], -cfg.sbld_cap, cfg.sbld_cap)
    return MicroTimelines(times=times, sld=sld, local_sbld=local_sbld,
                          aux_speech_loudness=aux, hop=cfg.micro_hop), None


def critical_passages(micro: MicroTimelines, activity: SpeechActivity,
                      sld_threshold: float = -10.0,
                      sbld_threshold: float = 0.0) -> CriticalPassages:
    """Flag active hops whose SLD or local SBLD is below threshold."""
    if micro.times.shape != activity.times.shape or micro.hop != activity.hop:
        raise AlignmentError("micro timelines and activity use different grids")
    active = activity.mask
    with np.errstate(invalid="ignore"):
        low_sld = active & (micro.sld < sld_threshold)
        low_sbld = active & (micro.local_sbld < sbld_threshold)
    critical = low_sld | low_sbld
    intervals: list[tuple[float, float, str]] = []
    if critical.any():
        edges = np.flatnonzero(np.diff(np.concatenate(
            ([0], critical.view(np.int8), [0]))))
        half = micro.hop / 2.0
        for a, b in zip(edges[::2], edges[1::2]):
            has_sld = bool(low_sld[a:b].any())
            has_sbld = bool(low_sbld[a:b].any())
            reason = "both" if (has_sld and has_sbld) else (
                "low_sld" if has_sld else "low_sbld")
            intervals.append((float(micro.times[a] - half),
                              float(micro.times[b - 1] + half), reason))
    n_active = int(np.count_nonzero(active))
    n_critical = int(np.count_nonzero(critical))
    percentage = 100.0 * n_critical / n_active if n_active else None
    return CriticalPassages(intervals=intervals, critical_percentage=percentage,
                            n_critical_hops=n_critical, n_active_hops=n_active)


# ---------------------------------------------------------------------------
# Whole-program analysis

def analyze(mix=None, speech=None, background=None, activity=None,
            config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> AnalysisResult:
    """Measure everything measurable from the given inputs.

    Inputs are audio buffers or WAV paths. Individual measures that cannot
    be computed come back as None with an entry in ``reasons``; only input
    and alignment problems raise.
    """
    if mix is None and (speech is None or background is None):
        raise AlignmentError(
            "need a mix, or both speech and background stems "
            f"(got {[n for n, v in [('mix', mix), ('speech', speech), ('background', background)] if v is not None]})"
        )
    prog = run_pipeline(mix=mix, speech=speech, background=background, config=config)
    return analyze_series(prog, activity=activity)


def analyze_series(prog: ProgramSeries, activity=None) -> AnalysisResult:
    """Assemble the report from an already-streamed :class:`ProgramSeries`."""
    cfg = prog.config
    macro = MacroReport()
    reasons: dict[str, str] = {}

    def unmeasurable(name: str, why: str):
        reasons[name] = why

    mix_series = prog.series.get("mix")
    mix_momentary = mix_short_term = None
    program_lra_detail = speech_lra_detail = None

    too_short_st = prog.duration < cfg.meter.short_term_window
    too_short_mom = prog.duration < cfg.meter.momentary_window

    if mix_series is not None:
        macro.sample_peak = _none_if_neg_inf(prog.mix_peaks.sample_peak)
        macro.true_peak = _none_if_neg_inf(prog.mix_peaks.true_peak)
        if macro.sample_peak is None:
            unmeasurable("sample_peak", "digital silence")
            unmeasurable("true_peak", "digital silence")
        if too_short_mom:
            for name in ("program_loudness", "max_momentary", "max_short_term",
                         "program_lra"):
                unmeasurable(name, f"program shorter than the "
                                   f"{cfg.meter.momentary_window:g} s gating block")
        else:
            t_mom, z_mom = _momentary_energies(mix_series, cfg)
            mix_momentary = LoudnessTimeline(
                t_mom, lufs_from_energy(z_mom), cfg.meter.momentary_window,
                cfg.meter.momentary_hop, "mix")
            macro.program_loudness = gated_loudness(
                z_mom, cfg.meter.absolute_gate, cfg.meter.relative_gate_offset)
            if macro.program_loudness is None:
                unmeasurable("program_loudness", "all blocks below gate")
            macro.max_momentary = _none_if_neg_inf(mix_momentary.max)
            if macro.max_momentary is None:
                unmeasurable("max_momentary", "digital silence")
            if too_short_st:
                unmeasurable("max_short_term", f"program shorter than the "
                             f"{cfg.meter.short_term_window:g} s short-term window")
                unmeasurable("program_lra", "program shorter than the short-term window")
            else:
                mix_short_term = mix_series.loudness(
                    cfg.meter.short_term_window, cfg.micro_hop, "mix")
                macro.max_short_term = _none_if_neg_inf(mix_short_term.max)
                if macro.max_short_term is None:
                    unmeasurable("max_short_term", "digital silence")
                lra_values = lufs_from_energy(mix_series.block_energies(
                    cfg.meter.short_term_window, cfg.lra_hop))
                program_lra_detail = lra_from_values(lra_values)
                if program_lra_detail is None:
                    unmeasurable("program_lra", "all blocks below gate")
                else:
                    macro.program_lra = program_lra_detail.lra
    else:
        for name in ("program_loudness", "program_lra", "max_momentary",
                     "max_short_term", "sample_peak", "true_peak"):
            unmeasurable(name, "mix unavailable")

    # Resolve speech activity: explicit sidecar wins, else derive from speech.
    speech_series = prog.series.get("speech")
    grid_series = speech_series if speech_series is not None else mix_series
    resolved_activity = None
    if grid_series is not None and not too_short_st:
        grid_times = _micro_times(grid_series, cfg)
        if activity is not None:
            resolved_activity = _quantize_activity(activity, grid_times, cfg.micro_hop)
        elif speech_series is not None:
            resolved_activity = _activity_from_series(prog, cfg)

    if speech_series is not None:
        if too_short_mom:
            for name in ("speech_loudness", "speech_lra", "ldr", "sbld_integrated"):
                unmeasurable(name, "program shorter than the gating block")
        else:
            macro.speech_loudness = _speech_loudness(speech_series, cfg)
            if macro.speech_loudness is None:
                unmeasurable("speech_loudness", "speech stem below gate")
            macro.ldr = ldr(macro.program_loudness, macro.speech_loudness)
            if macro.ldr is None:
                unmeasurable("ldr", "needs program and speech loudness")
            if too_short_st:
                unmeasurable("speech_lra", "program shorter than the short-term window")
            else:
                speech_lra_detail = lra_from_values(lufs_from_energy(
                    speech_series.block_energies(cfg.meter.short_term_window,
                                                 cfg.lra_hop)))
                if speech_lra_detail is None:
                    unmeasurable("speech_lra", "speech stem below gate")
                else:
                    macro.speech_lra = speech_lra_detail.lra
    else:
        for name in ("speech_loudness", "speech_lra", "ldr"):
            unmeasurable(name, "speech stem unavailable")

    if resolved_activity is None or resolved_activity.is_empty:
        why = ("no speech activity detected" if resolved_activity is not None
               else "no speech activity available")
        for name in ("speech_gated_loudness", "speech_gated_lra",
                     "sbld_integrated", "critical_percentage"):
            reasons.setdefault(name, why)
    else:
        if mix_series is not None and not too_short_mom:
            macro.speech_gated_loudness = _speech_gated_loudness(
                mix_series, resolved_activity, cfg)
            if macro.speech_gated_loudness is None:
                unmeasurable("speech_gated_loudness", "active blocks below gate")
            if not too_short_st:
                st_t = mix_series.block_times(cfg.meter.short_term_window, cfg.lra_hop)
                st_v = lufs_from_energy(mix_series.block_energies(
                    cfg.meter.short_term_window, cfg.lra_hop))
                sel = resolved_activity.active_at(st_t)
                detail = lra_from_values(st_v[sel]) if sel.any() else None
                if detail is None:
                    unmeasurable("speech_gated_lra", "no active short-term blocks above gate")
                else:
                    macro.speech_gated_lra = detail.lra
            else:
                unmeasurable("speech_gated_lra", "program shorter than the short-term window")
        else:
            why = "mix unavailable" if mix_series is None else "program too short"
            unmeasurable("speech_gated_loudness", why)
            unmeasurable("speech_gated_lra", why)
        if speech_series is not None and prog.has("background") and not too_short_mom:
            macro.sbld_integrated = _sbld_integrated(
                speech_series, prog.series["background"], resolved_activity, cfg)
            if macro.sbld_integrated is None:
                unmeasurable("sbld_integrated", "speech below gate over active blocks")
            elif macro.sbld_integrated >= cfg.sbld_cap:
                reasons["sbld_integrated"] = (
                    f"background silent during speech; capped at +{cfg.sbld_cap:g} LU")
        elif "sbld_integrated" not in reasons:
            unmeasurable("sbld_integrated", "needs speech and background stems")

    micro, micro_reason = _micro_from_series(prog, resolved_activity, cfg)
    critical = None
    if micro is None:
        unmeasurable("micro", micro_reason or "unavailable")
        reasons.setdefault("critical_percentage", micro_reason or "unavailable")
    elif resolved_activity is None or resolved_activity.is_empty:
        reasons.setdefault("critical_percentage", "no speech activity")
    else:
        critical = critical_passages(micro, resolved_activity,
                                     cfg.sld_threshold, cfg.sbld_threshold)
        macro.critical_percentage = critical.critical_percentage
        if macro.critical_percentage is None:
            unmeasurable("critical_percentage", "no active speech time")

    return AnalysisResult(
        macro=macro,
        micro=micro,
        critical=critical,
        activity=resolved_activity,
        mix_momentary=mix_momentary,
        mix_short_term=mix_short_term,
        program_lra_detail=program_lra_detail,
        speech_lra_detail=speech_lra_detail,
        reasons=reasons,
        notes=list(prog.notes),
        sample_rate=prog.sample_rate,
        n_frames=prog.n_frames,
        config=cfg,
    )


def macro_report(stems: StemSet, activity=None,
                 config: AnalysisConfig = DEFAULT_ANALYSIS_CONFIG) -> MacroReport:
    """All program-level measures for a stem set (sentinels, never aborts)."""
    result = analyze(mix=stems.mix, speech=stems.speech, background=stems.background,
                     activity=activity, config=config)
    return result.macro


def _none_if_neg_inf(value: float) -> float | None:
    return None if value == NEG_INF else float(value)
