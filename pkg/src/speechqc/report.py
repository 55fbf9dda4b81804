"""Report serialization: JSON report, plot-ready CSV timelines, curve tables.

Sentinel values are serialised as JSON null (never NaN/Infinity), each with
a machine-readable reason string. Files are written atomically (temp file
plus rename) and, under ``reproducible``, contain nothing volatile, so
identical inputs yield byte-identical outputs.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .harness import CurveTable, MaeReport
from .measures import AnalysisResult
from .qc import QcFindings

SCHEMA_VERSION = 1
SCHEMA_PATH = Path(__file__).parent / "schemas" / "report.schema.json"

MEASURE_FIELDS = {
    "program_loudness": "program_loudness_lufs",
    "program_lra": "program_lra_lu",
    "max_momentary": "max_momentary_lufs",
    "max_short_term": "max_short_term_lufs",
    "sample_peak": "sample_peak_dbfs",
    "true_peak": "true_peak_dbtp",
    "speech_gated_loudness": "speech_gated_loudness_lufs",
    "speech_gated_lra": "speech_gated_lra_lu",
    "speech_loudness": "speech_loudness_lufs",
    "speech_lra": "speech_lra_lu",
    "ldr": "ldr_lu",
    "sbld_integrated": "sbld_lu",
    "critical_percentage": "critical_speech_percentage",
}


def _num(value, digits: int = 6):
    """JSON-safe number: finite floats rounded, everything else null."""
    if value is None:
        return None
    value = float(value)
    if not math.isfinite(value):
        return None
    return round(value, digits)


def atomic_write_text(path: str | Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _config_dict(result: AnalysisResult) -> dict:
    cfg = result.config
    meter = cfg.meter
    return {
        "momentary_window_s": meter.momentary_window,
        "momentary_hop_s": meter.momentary_hop,
        "short_term_window_s": meter.short_term_window,
        "short_term_hop_s": meter.short_term_hop,
        "absolute_gate_lufs": meter.absolute_gate,
        "relative_gate_offset_lu": meter.relative_gate_offset,
        "aux_window_s": cfg.aux_window,
        "activation_threshold_lufs": cfg.activation_threshold,
        "sbld_floor_lu": cfg.sbld_floor,
        "sld_threshold_lu": cfg.sld_threshold,
        "sbld_threshold_lu": cfg.sbld_threshold,
        "lra_hop_s": cfg.lra_hop,
        "sbld_cap_lu": cfg.sbld_cap,
        "speech_gating": cfg.speech_gating,
        "gated_background": cfg.gated_background,
    }


def report_dict(result: AnalysisResult, findings: QcFindings | None = None,
                inputs: dict[str, str | None] | None = None,
                speech_stem_path: str | None = None,
                reproducible: bool = False) -> dict:
    """The analysis as a schema-stable JSON-ready mapping."""
    measures = {
        json_name: _num(getattr(result.macro, attr))
        for attr, json_name in MEASURE_FIELDS.items()
    }
    reasons = {MEASURE_FIELDS.get(k, k): v for k, v in sorted(result.reasons.items())}
    doc: dict = {
        "schema_version": SCHEMA_VERSION,
        "program": {
            "duration_s": _num(result.duration, 3),
            "sample_rate_hz": result.sample_rate,
            "measures": measures,
            "reasons": reasons,
            "notes": list(result.notes),
        },
        "speech_activity": None,
        "critical_passages": [],
        "qc": None,
        "config": _config_dict(result),
    }
    if result.activity is not None:
        doc["speech_activity"] = {
            "source": result.activity.source,
            "coverage_s": _num(result.activity.coverage_s, 3),
            "n_intervals": len(result.activity.intervals),
        }
    if result.critical is not None:
        doc["critical_passages"] = [
            {"start_s": _num(start, 3), "end_s": _num(end, 3), "reason": reason}
            for start, end, reason in result.critical.intervals
        ]
    if findings is not None:
        doc["qc"] = {
            "passed": findings.passed,
            "findings": [
                {
                    "rule": f.rule,
                    "status": f.status,
                    "measured": _num(f.measured),
                    "bound": _num(f.bound),
                    "n_offending_intervals": len(f.intervals),
                }
                for f in findings.findings
            ],
        }
    if not reproducible:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
        if inputs is not None:
            doc["inputs"] = {k: v for k, v in inputs.items()}
        if speech_stem_path is not None:
            doc["speech_stem_path"] = speech_stem_path
    return doc


def render_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(value, fmt: str = "{:.4f}") -> str:
    if value is None:
        return ""
    value = float(value)
    if not math.isfinite(value):
        return ""
    return fmt.format(value)


def timelines_csv(result: AnalysisResult) -> str:
    """t, momentary, short_term, sld, local_sbld, active, critical rows."""
    rows: dict[int, list[str]] = {}

    def row(t: float) -> list[str]:
        key = round(t * 1000)
        if key not in rows:
            rows[key] = [""] * 6
        return rows[key]

    if result.mix_momentary is not None:
        for t, v in zip(result.mix_momentary.times, result.mix_momentary.values):
            row(t)[0] = _cell(v)
    if result.mix_short_term is not None:
        for t, v in zip(result.mix_short_term.times, result.mix_short_term.values):
            row(t)[1] = _cell(v)
    if result.micro is not None:
        critical_mask = None
        if result.critical is not None:
            critical_mask = np.zeros(result.micro.times.shape, dtype=bool)
            for start, end, _reason in result.critical.intervals:
                critical_mask |= ((result.micro.times >= start)
                                  & (result.micro.times <= end))
        active_mask = (result.activity.mask if result.activity is not None else None)
        for i, t in enumerate(result.micro.times):
            r = row(t)
            r[2] = _cell(result.micro.sld[i])
            r[3] = _cell(result.micro.local_sbld[i])
            if active_mask is not None:
                r[4] = "1" if active_mask[i] else "0"
            if critical_mask is not None:
                r[5] = "1" if critical_mask[i] else "0"

    lines = ["t,momentary,short_term,sld,local_sbld,active,critical"]
    for key in sorted(rows):
        lines.append(f"{key / 1000:.3f}," + ",".join(rows[key]))
    return "\n".join(lines) + "\n"


def critical_csv(result: AnalysisResult) -> str:
    lines = ["start_s,end_s,reason"]
    if result.critical is not None:
        for start, end, reason in result.critical.intervals:
            lines.append(f"{start:.3f},{end:.3f},{reason}")
    return "\n".join(lines) + "\n"


def curve_csv(curve: CurveTable) -> str:
    lines = ["sbld_lu,mean_lu,std_lu,n_pairs"]
    for x, mean, std, n in zip(curve.grid, curve.mean, curve.std, curve.n_pairs):
        lines.append(f"{x:.3f},{_cell(mean)},{_cell(std)},{n}")
    return "\n".join(lines) + "\n"


def mae_csv(report: MaeReport) -> str:
    lines = ["condition,measure,mae_lu,std_lu,n"]
    for e in report.entries:
        lines.append(f"{e.condition},{e.measure},{_cell(e.mae)},{_cell(e.std)},{e.n}")
    return "\n".join(lines) + "\n"


def mae_json(report: MaeReport, reproducible: bool = False) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "conditions": report.conditions,
        "entries": [
            {"condition": e.condition, "measure": e.measure,
             "mae_lu": _num(e.mae), "std_lu": _num(e.std), "n": e.n}
            for e in report.entries
        ],
        "failures": [
            {"pair": pair, "condition": condition, "error": error}
            for pair, condition, error in report.failures
        ],
    }
    if not reproducible:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    return render_json(doc)


def load_schema() -> dict:
    with open(SCHEMA_PATH) as f:
        return json.load(f)
