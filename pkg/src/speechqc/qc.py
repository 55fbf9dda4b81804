"""QC rule presets and evaluation against a program report."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .measures import CriticalPassages, MacroReport


@dataclass(frozen=True)
class QcRuleSet:
    """Bounds to check a program against; None disables a rule.

    Detection thresholds (``sld_threshold`` / ``sbld_threshold``) shape the
    critical-passage analysis itself rather than being pass/fail bounds.
    """

    min_sbld: float | None = None                 # LU
    max_ldr: float | None = None                  # LU
    max_critical_percentage: float | None = None  # percent of active speech
    target_program_loudness: float | None = None  # LUFS
    program_loudness_tolerance: float = 1.0       # +/- LU around the target
    sld_threshold: float = -10.0
    sbld_threshold: float = 0.0

    def overridden(self, **overrides) -> "QcRuleSet":
        """Layer user overrides over this (immutable) preset."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


# A minimum SBLD of 4 LU follows the DPP delivery recommendation; EBU's
# cinema guidance keeps LDR under 5 LU. "paper-defaults" carries only the
# critical-detection thresholds.
RULE_PRESETS: dict[str, QcRuleSet] = {
    "default": QcRuleSet(min_sbld=4.0, max_critical_percentage=50.0),
    "dpp": QcRuleSet(min_sbld=4.0),
    "ebu-cinema": QcRuleSet(max_ldr=5.0),
    "paper-defaults": QcRuleSet(sld_threshold=-10.0, sbld_threshold=0.0),
    "none": QcRuleSet(),
}


def rule_preset(name: str) -> QcRuleSet:
    try:
        return RULE_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown rules preset {name!r} (have: {', '.join(sorted(RULE_PRESETS))})"
        ) from None


def ruleset_from_mapping(mapping: dict[str, str], base: QcRuleSet | None = None) -> QcRuleSet:
    """Build a rule set from key=value text (rules file or config section)."""
    base = base or QcRuleSet()
    known = {f.name for f in fields(QcRuleSet)}
    overrides = {}
    for key, value in mapping.items():
        if key == "preset":
            base = rule_preset(value)
            continue
        if key not in known:
            raise ConfigError(f"unknown rule {key!r} (have: {', '.join(sorted(known))})")
        try:
            overrides[key] = float(value)
        except ValueError:
            raise ConfigError(f"rule {key!r} needs a number, got {value!r}") from None
    return base.overridden(**overrides)


@dataclass
class QcFinding:
    """Outcome of one enabled rule."""

    rule: str
    status: str            # pass | fail | unmeasured
    measured: float | None
    bound: float | None
    intervals: list[tuple[float, float, str]] = field(default_factory=list)


@dataclass
class QcFindings:
    findings: list[QcFinding]

    @property
    def passed(self) -> bool:
        return all(f.status != "fail" for f in self.findings)

    @property
    def violations(self) -> list[QcFinding]:
        return [f for f in self.findings if f.status == "fail"]


def evaluate_rules(rules: QcRuleSet, macro: MacroReport,
                   critical: CriticalPassages | None = None) -> QcFindings:
    """One finding per enabled rule; unmeasurable inputs never count as failures."""
    findings: list[QcFinding] = []

    def check(rule: str, measured: float | None, bound: float, ok) -> QcFinding:
        if measured is None:
            return QcFinding(rule, "unmeasured", None, bound)
        return QcFinding(rule, "pass" if ok(measured) else "fail", measured, bound)

    if rules.min_sbld is not None:
        findings.append(check("min_sbld", macro.sbld_integrated, rules.min_sbld,
                              lambda v: v >= rules.min_sbld))
    if rules.max_ldr is not None:
        findings.append(check("max_ldr", macro.ldr, rules.max_ldr,
                              lambda v: v <= rules.max_ldr))
    if rules.max_critical_percentage is not None:
        finding = check("max_critical_percentage", macro.critical_percentage,
                        rules.max_critical_percentage,
                        lambda v: v <= rules.max_critical_percentage)
        if finding.status == "fail" and critical is not None:
            finding.intervals = list(critical.intervals)
        findings.append(finding)
    if rules.target_program_loudness is not None:
        target, tol = rules.target_program_loudness, rules.program_loudness_tolerance
        findings.append(check("target_program_loudness", macro.program_loudness,
                              target, lambda v: abs(v - target) <= tol))
    return QcFindings(findings)
