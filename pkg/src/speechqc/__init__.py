"""Loudness metering and speech-intelligibility QC for broadcast programs.

Program loudness, LRA, and peaks per the BS.1770 measurement model, plus
speech-centric measures (speech loudness, speech-gated loudness, LDR,
SBLD) and detection of critical passages where speech is likely hard to
understand.
"""
from .activity import ActivitySidecar, SpeechActivity, load_activity, save_activity
from .audio import (
    AudioBuffer,
    StemSet,
    derive_background,
    mix_stems,
    resample_audio,
)
from .dynamics import LraResult, lra, lra_from_values
from .errors import (
    AlignmentError,
    ConfigError,
    HarnessError,
    ProgramTooShortError,
    SeparatorCommandError,
    SeparatorError,
    SeparatorOutputError,
    SeparatorTimeoutError,
    SidecarError,
    SpeechQcError,
    UnsupportedFormatError,
    WavParseError,
)
from .harness import (
    CurveTable,
    MaeReport,
    MixSpec,
    PairSpec,
    evaluate_separator,
    gated_bias_curve,
    generate_corpus,
    ldr_sbld_curve,
    load_corpus,
    make_background_like,
    make_speech_like,
    mix_at_sbld,
    oracle_activity,
    synthetic_corpus,
)
from .measures import (
    AnalysisResult,
    CriticalPassages,
    MacroReport,
    MicroTimelines,
    analyze,
    critical_passages,
    detect_activity,
    ldr,
    macro_report,
    micro_timelines,
    sbld_integrated,
    speech_gated_loudness,
    speech_loudness,
    speech_lra,
)
from .meter import (
    DEFAULT_CHANNEL_WEIGHTS,
    LoudnessTimeline,
    MeterConfig,
    PeakReport,
    block_loudness,
    integrated_loudness,
    k_filter_sos,
    k_weight,
    momentary,
    peaks,
    short_term,
)
from .pipeline import AnalysisConfig, ProgramSeries, run_pipeline
from .qc import QcFinding, QcFindings, QcRuleSet, RULE_PRESETS, evaluate_rules, rule_preset
from .separator import SeparatorSpec, separate
from .wavio import load_audio, read_wav, write_wav

__version__ = "0.1.0"
