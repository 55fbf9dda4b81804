"""Command-line interface: analyze programs, run mixing experiments, evaluate separators.

Exit codes: 0 all checks passed, 2 one or more QC rules failed, 1 anything
went wrong (bad usage, unreadable inputs, ...).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, report
from .activity import load_activity
from .errors import SeparatorError, SpeechQcError
from .measures import analyze
from .pipeline import AnalysisConfig, config_with_hop
from .qc import RULE_PRESETS, QcRuleSet, evaluate_rules, rule_preset, ruleset_from_mapping
from .separator import DEFAULT_TIMEOUT_S, SeparatorSpec, separate
from .wavio import load_audio, parse_wav_header, write_wav

log = logging.getLogger("speechqc")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_RULES_FAILED = 2

def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# Option names accepted from a config file, with their casters (flags still win).
_CONFIG_CASTERS = {
    "mix": str, "speech": str, "background": str, "activity": str,
    "separator_cmd": str, "rules": str, "out": str,
    "sld_threshold": float, "sbld_threshold": float, "hop": float,
    "jobs": int, "reproducible": _parse_bool,
    "seed": int, "pairs": int, "duration": float,
    "corpus": str, "sbld_grid": str, "conditions": str,
    "timeout": float, "speech_gating": str, "gated_background": _parse_bool,
    "target_rate": int,
}


def parse_kv_file(path: str) -> dict[str, str]:
    """Parse a ``key = value`` config file ('#' starts a comment)."""
    mapping: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise SpeechQcError(f"{path}:{lineno}: expected key = value, got {text!r}")
            key, value = text.split("=", 1)
            mapping[key.strip().replace("-", "_")] = value.strip().strip('"')
    return mapping


def _apply_config_file(parser: argparse.ArgumentParser, path: str | None):
    if path is None:
        return
    mapping = parse_kv_file(path)
    defaults = {}
    for key, raw in mapping.items():
        caster = _CONFIG_CASTERS.get(key)
        if caster is None:
            raise SpeechQcError(f"unknown config key {key!r} in {path}")
        try:
            defaults[key] = caster(raw)
        except ValueError as exc:
            raise SpeechQcError(f"bad value for {key!r} in {path}: {exc}") from exc
    parser.set_defaults(**defaults)


def _add_common(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="key = value file mirroring these flags (flags win)")
    sub.add_argument("--out", default=".", help="output directory (default: current)")
    sub.add_argument("--jobs", type=int, default=1, help="parallel corpus workers")
    sub.add_argument("--reproducible", action="store_true",
                     help="omit timestamps/paths so identical inputs give identical bytes")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="speechqc",
        description="Loudness and speech-intelligibility QC for broadcast programs.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    analyze_cmd = commands.add_parser(
        "analyze", help="measure one program and check QC rules")
    analyze_cmd.add_argument("--mix", help="program mix WAV")
    analyze_cmd.add_argument("--speech", help="clean speech stem WAV")
    analyze_cmd.add_argument("--background", help="background (music & effects) stem WAV")
    analyze_cmd.add_argument("--activity", help="speech-activity sidecar CSV (start,end per line)")
    analyze_cmd.add_argument("--separator-cmd",
                             help="command template with {input} {output_speech} "
                                  "[{output_background}] to estimate a speech stem")
    analyze_cmd.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT_S,
                             help="separator timeout in seconds")
    analyze_cmd.add_argument("--rules", default="default",
                             help=f"QC preset ({', '.join(sorted(RULE_PRESETS))}) "
                                  "or a key = value rules file")
    analyze_cmd.add_argument("--sld-threshold", type=float,
                             help="critical threshold for local SLD in LU")
    analyze_cmd.add_argument("--sbld-threshold", type=float,
                             help="critical threshold for local SBLD in LU")
    analyze_cmd.add_argument("--hop", type=float,
                             help="microscopic/short-term hop in seconds (default 0.1)")
    analyze_cmd.add_argument("--speech-gating", choices=("standard", "ungated"),
                             default="standard",
                             help="gating used for the speech stem's integrated loudness")
    analyze_cmd.add_argument("--gated-background", action="store_true",
                             help="apply two-stage gating to the background side of SBLD")
    analyze_cmd.add_argument("--target-rate", type=int,
                             help="resample inputs to this rate before analysis")
    _add_common(analyze_cmd)
    analyze_cmd.set_defaults(func=cmd_analyze)

    simulate_cmd = commands.add_parser(
        "simulate", help="reproduce the gated-bias and LDR-vs-SBLD curves")
    simulate_cmd.add_argument("--corpus", help="folder with pairs/<id>/speech.wav+background.wav")
    simulate_cmd.add_argument("--pairs", type=int, default=24,
                              help="synthetic pairs when no corpus is given")
    simulate_cmd.add_argument("--seed", type=int, default=0)
    simulate_cmd.add_argument("--duration", type=float, default=10.0,
                              help="synthetic pair duration in seconds")
    simulate_cmd.add_argument("--sbld-grid", default="-10,-5,0,5,10,15,20",
                              help="comma-separated SBLD targets in LU")
    _add_common(simulate_cmd)
    simulate_cmd.set_defaults(func=cmd_simulate)

    evaluate_cmd = commands.add_parser(
        "evaluate", help="measure a separator's SL/SBLD estimation error")
    evaluate_cmd.add_argument("--corpus", help="folder with pairs/<id>/speech.wav+background.wav")
    evaluate_cmd.add_argument("--pairs", type=int, default=8,
                              help="synthetic pairs when no corpus is given")
    evaluate_cmd.add_argument("--seed", type=int, default=0)
    evaluate_cmd.add_argument("--duration", type=float, default=10.0)
    evaluate_cmd.add_argument("--separator-cmd", required=True,
                              help="command template with {input} {output_speech} "
                                   "[{output_background}]")
    evaluate_cmd.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT_S)
    evaluate_cmd.add_argument("--conditions", default="-10,-5,0,5,10,speech_only",
                              help="comma-separated SBLD targets and/or 'speech_only'")
    _add_common(evaluate_cmd)
    evaluate_cmd.set_defaults(func=cmd_evaluate)
    return parser, {"analyze": analyze_cmd, "simulate": simulate_cmd,
                    "evaluate": evaluate_cmd}


def _resolve_rules(args) -> QcRuleSet:
    if args.rules in RULE_PRESETS:
        rules = rule_preset(args.rules)
    elif Path(args.rules).exists():
        rules = ruleset_from_mapping(parse_kv_file(args.rules))
    else:
        raise SpeechQcError(
            f"--rules {args.rules!r} is neither a preset "
            f"({', '.join(sorted(RULE_PRESETS))}) nor a readable file")
    return rules.overridden(sld_threshold=args.sld_threshold,
                            sbld_threshold=args.sbld_threshold)


def _analysis_config(args, rules: QcRuleSet) -> AnalysisConfig:
    cfg = AnalysisConfig(
        sld_threshold=rules.sld_threshold,
        sbld_threshold=rules.sbld_threshold,
        speech_gating=getattr(args, "speech_gating", "standard"),
        gated_background=getattr(args, "gated_background", False),
    )
    if getattr(args, "hop", None):
        cfg = config_with_hop(cfg, args.hop)
    return cfg


def _load_inputs(args, cfg: AnalysisConfig):
    """Resolve input paths to streamable paths or resampled buffers."""
    paths = {name: getattr(args, name) for name in ("mix", "speech", "background")}
    present = {name: path for name, path in paths.items() if path}
    if not present:
        raise SpeechQcError("no inputs: pass --mix and/or stems")
    rates = {}
    for name, path in present.items():
        rates[name] = parse_wav_header(path).sample_rate
    target = getattr(args, "target_rate", None) or rates.get("mix") or next(iter(rates.values()))
    inputs = {}
    notes = []
    for name, path in present.items():
        if rates[name] == target:
            inputs[name] = path  # streamed straight from disk
        else:
            log.warning("%s is at %d Hz; resampling to %d Hz", name, rates[name], target)
            inputs[name] = load_audio(path, target_rate=target)
            notes.append(f"{name} resampled from {rates[name]} to {target} Hz")
    return inputs, notes


def cmd_analyze(args) -> int:
    rules = _resolve_rules(args)
    cfg = _analysis_config(args, rules)
    inputs, resample_notes = _load_inputs(args, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    separator_note = None
    speech_stem_path = None
    if args.separator_cmd and "speech" not in inputs:
        if "mix" not in inputs:
            raise SpeechQcError("--separator-cmd needs --mix")
        spec = SeparatorSpec(command_template=args.separator_cmd, timeout_s=args.timeout)
        mix_buffer = inputs["mix"] if not isinstance(inputs["mix"], str) \
            else load_audio(inputs["mix"])
        try:
            stems = separate(mix_buffer, spec)
            inputs["mix"] = stems.mix
            inputs["speech"] = stems.speech
            inputs["background"] = stems.background
            estimate_path = out_dir / "speech_estimate.wav"
            write_wav(str(estimate_path), stems.speech, fmt="float32")
            speech_stem_path = str(estimate_path)
        except SeparatorError as exc:
            log.error("separator failed; speech measures unavailable: %s", exc)
            separator_note = f"separator failed: {exc}"

    sidecar = load_activity(args.activity) if args.activity else None
    result = analyze(mix=inputs.get("mix"), speech=inputs.get("speech"),
                     background=inputs.get("background"), activity=sidecar, config=cfg)
    result.notes.extend(resample_notes)
    if separator_note:
        result.notes.append(separator_note)
        for name in ("speech_loudness", "speech_lra", "ldr", "sbld_integrated",
                     "speech_gated_loudness", "speech_gated_lra", "critical_percentage"):
            if name in result.reasons:  # the generic "unavailable" reason
                result.reasons[name] = separator_note

    findings = evaluate_rules(rules, result.macro, result.critical)
    doc = report.report_dict(
        result, findings,
        inputs={name: (path if isinstance(path, str) else None)
                for name, path in inputs.items()},
        speech_stem_path=speech_stem_path,
        reproducible=args.reproducible,
    )
    report.atomic_write_text(out_dir / "report.json", report.render_json(doc))
    report.atomic_write_text(out_dir / "timelines.csv", report.timelines_csv(result))
    report.atomic_write_text(out_dir / "critical.csv", report.critical_csv(result))

    for finding in findings.findings:
        log.info("rule %-28s %-10s measured=%s bound=%s", finding.rule, finding.status,
                 finding.measured, finding.bound)
    if not findings.passed:
        log.warning("QC failed: %s", ", ".join(f.rule for f in findings.violations))
        return EXIT_RULES_FAILED
    return EXIT_OK


def _corpus_from_args(args) -> list[harness.PairSpec]:
    if args.corpus:
        return harness.load_corpus(args.corpus)
    return harness.synthetic_corpus(args.pairs, seed=args.seed, duration=args.duration)


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise SpeechQcError(f"bad grid {text!r}: expected comma-separated numbers") from None


def cmd_simulate(args) -> int:
    pairs = _corpus_from_args(args)
    grid = _parse_grid(args.sbld_grid)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bias = harness.gated_bias_curve(pairs, grid, jobs=args.jobs)
    ldr_curve = harness.ldr_sbld_curve(pairs, grid, jobs=args.jobs)
    report.atomic_write_text(out_dir / "gated_bias_curve.csv", report.curve_csv(bias))
    report.atomic_write_text(out_dir / "ldr_vs_sbld_curve.csv", report.curve_csv(ldr_curve))
    for curve in (bias, ldr_curve):
        log.info("%s over %d pairs: %s", curve.name, curve.n_pairs[0],
                 ", ".join(f"{x:+g}->{m:.2f}" for x, m in zip(curve.grid, curve.mean)))
        if curve.failures:
            log.warning("%s: %d pair(s) failed", curve.name, len(curve.failures))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pairs = _corpus_from_args(args)
    conditions: list = []
    for token in args.conditions.split(","):
        token = token.strip()
        if not token:
            continue
        conditions.append(token if token == harness.SPEECH_ONLY else float(token))
    spec = SeparatorSpec(command_template=args.separator_cmd, timeout_s=args.timeout)
    mae = harness.evaluate_separator(pairs, spec, conditions, jobs=args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.atomic_write_text(out_dir / "mae_report.json",
                             report.mae_json(mae, reproducible=args.reproducible))
    report.atomic_write_text(out_dir / "mae_report.csv", report.mae_csv(mae))
    measured = [e for e in mae.entries if e.n > 0]
    if not measured:
        log.error("separator failed on every pair (%d failures)", len(mae.failures))
        return EXIT_ERROR
    for entry in measured:
        log.info("%-12s %-16s mae=%.3f std=%.3f n=%d",
                 entry.condition, entry.measure, entry.mae, entry.std, entry.n)
    if mae.failures:
        log.warning("%d pair/condition runs failed and were excluded", len(mae.failures))
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser, subparsers = build_parser()
    try:
        # two-phase parse so a --config file can set defaults that flags override
        pre, _ = parser.parse_known_args(argv)
        config_path = getattr(pre, "config", None)
        if config_path:
            _apply_config_file(subparsers[pre.command], config_path)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    except SpeechQcError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    try:
        return args.func(args)
    except SpeechQcError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
