import json
import sys
import textwrap

import jsonschema
import numpy as np
import pytest

from speechqc import (
    MixSpec,
    make_background_like,
    make_speech_like,
    mix_at_sbld,
    write_wav,
)
from speechqc.cli import main
from speechqc.report import load_schema

PY = sys.executable


def run_cli(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def program_files(tmp_path_factory):
    """A healthy program (SBLD 8, well above the DPP bound) on disk."""
    tmp = tmp_path_factory.mktemp("program")
    speech = make_speech_like(8.0, seed=70)
    background = make_background_like(8.0, seed=71)
    stems = mix_at_sbld(speech, background, MixSpec(target_sbld=8.0))
    paths = {}
    for name in ("mix", "speech", "background"):
        path = tmp / f"{name}.wav"
        write_wav(str(path), getattr(stems, name), fmt="float64")
        paths[name] = str(path)
    return paths


@pytest.fixture(scope="module")
def low_sbld_files(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("low")
    speech = make_speech_like(8.0, seed=72)
    background = make_background_like(8.0, seed=73)
    stems = mix_at_sbld(speech, background, MixSpec(target_sbld=-5.0))
    paths = {}
    for name in ("mix", "speech", "background"):
        path = tmp / f"{name}.wav"
        write_wav(str(path), getattr(stems, name), fmt="float64")
        paths[name] = str(path)
    return paths


class TestAnalyze:
    def test_healthy_program_passes(self, program_files, tmp_path):
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", program_files["mix"],
                       "--speech", program_files["speech"],
                       "--background", program_files["background"],
                       "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["qc"]["passed"] is True
        assert report["program"]["measures"]["sbld_lu"] == pytest.approx(8.0, abs=0.2)
        assert (out / "timelines.csv").exists()
        assert (out / "critical.csv").exists()

    def test_report_validates_against_schema(self, program_files, tmp_path):
        out = tmp_path / "out"
        run_cli("analyze", "--mix", program_files["mix"],
                "--speech", program_files["speech"],
                "--background", program_files["background"], "--out", str(out))
        report = json.loads((out / "report.json").read_text())
        jsonschema.validate(report, load_schema())

    def test_low_sbld_fails_rules(self, low_sbld_files, tmp_path):
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", low_sbld_files["mix"],
                       "--speech", low_sbld_files["speech"],
                       "--background", low_sbld_files["background"],
                       "--out", str(out))
        assert code == 2
        report = json.loads((out / "report.json").read_text())
        failed = {f["rule"] for f in report["qc"]["findings"] if f["status"] == "fail"}
        assert failed == {"min_sbld", "max_critical_percentage"}
        # everything at SBLD -5 is critical
        assert report["program"]["measures"]["critical_speech_percentage"] > 95.0

    def test_ebu_cinema_ldr_rule(self, tmp_path):
        # SBLD ~ -4.7 puts LDR near 6 LU for uncorrelated stems
        speech = make_speech_like(8.0, seed=74)
        background = make_background_like(8.0, seed=75)
        stems = mix_at_sbld(speech, background, MixSpec(target_sbld=-4.7))
        paths = {}
        for name in ("mix", "speech", "background"):
            path = tmp_path / f"{name}.wav"
            write_wav(str(path), getattr(stems, name), fmt="float64")
            paths[name] = str(path)
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", paths["mix"], "--speech", paths["speech"],
                       "--background", paths["background"],
                       "--rules", "ebu-cinema", "--out", str(out))
        assert code == 2
        report = json.loads((out / "report.json").read_text())
        (finding,) = [f for f in report["qc"]["findings"] if f["rule"] == "max_ldr"]
        assert finding["status"] == "fail"
        assert finding["measured"] > 5.0

    def test_missing_inputs_is_usage_error(self, tmp_path):
        assert run_cli("analyze", "--out", str(tmp_path)) == 1

    def test_unreadable_file_is_error(self, tmp_path):
        assert run_cli("analyze", "--mix", str(tmp_path / "nope.wav")) == 1

    def test_speech_only_program_with_default_rules(self, tmp_path):
        speech = make_speech_like(8.0, seed=76)
        path = tmp_path / "speech.wav"
        write_wav(str(path), speech, fmt="float64")
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", str(path), "--speech", str(path),
                       "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["program"]["measures"]["critical_speech_percentage"] == 0.0
        assert report["program"]["measures"]["ldr_lu"] == pytest.approx(0.0, abs=0.05)

    def test_reproducible_runs_are_byte_identical(self, program_files, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = run_cli("analyze", "--mix", program_files["mix"],
                           "--speech", program_files["speech"],
                           "--background", program_files["background"],
                           "--reproducible", "--out", str(out))
            assert code == 0
            outs.append(out)
        for filename in ("report.json", "timelines.csv", "critical.csv"):
            assert (outs[0] / filename).read_bytes() == (outs[1] / filename).read_bytes()

    def test_timestamp_only_without_reproducible(self, program_files, tmp_path):
        out = tmp_path / "out"
        run_cli("analyze", "--mix", program_files["mix"], "--out", str(out))
        report = json.loads((out / "report.json").read_text())
        assert "generated_at" in report and "inputs" in report
        out2 = tmp_path / "out2"
        run_cli("analyze", "--mix", program_files["mix"], "--reproducible",
                "--out", str(out2))
        report2 = json.loads((out2 / "report.json").read_text())
        assert "generated_at" not in report2 and "inputs" not in report2

    def test_activity_sidecar_gates_the_mix(self, program_files, tmp_path):
        sidecar = tmp_path / "act.csv"
        sidecar.write_text("1.5,6.5\n")
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", program_files["mix"],
                       "--activity", str(sidecar), "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["speech_activity"]["source"] == "oracle"
        assert report["program"]["measures"]["speech_gated_loudness_lufs"] is not None

    def test_config_file_mirrors_flags_and_flags_win(self, low_sbld_files, tmp_path):
        config = tmp_path / "qc.conf"
        config.write_text(textwrap.dedent(f"""
            # QC settings
            mix = {low_sbld_files['mix']}
            speech = {low_sbld_files['speech']}
            background = {low_sbld_files['background']}
            rules = none
            out = {tmp_path / 'from_config'}
        """))
        assert run_cli("analyze", "--config", str(config)) == 0  # rules=none passes
        # flag overrides the config's rules=none and now fails
        code = run_cli("analyze", "--config", str(config), "--rules", "dpp",
                       "--out", str(tmp_path / "flag_wins"))
        assert code == 2

    def test_separator_cmd_path(self, program_files, tmp_path):
        stub = tmp_path / "sep.py"
        stub.write_text("import shutil, sys\nshutil.copy(sys.argv[1], sys.argv[2])\n")
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", program_files["mix"],
                       "--separator-cmd", f"{PY} {stub} {{input}} {{output_speech}}",
                       "--rules", "none", "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        # identity separator: estimated speech == mix, so LDR reads 0
        assert report["program"]["measures"]["ldr_lu"] == pytest.approx(0.0, abs=0.05)
        assert report["speech_stem_path"].endswith("speech_estimate.wav")
        assert (out / "speech_estimate.wav").exists()

    def test_failed_separator_keeps_program_measures(self, program_files, tmp_path):
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", program_files["mix"],
                       "--separator-cmd", f"{PY} {tmp_path / 'missing.py'} "
                       "{input} {output_speech}",
                       "--rules", "none", "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["program"]["measures"]["program_loudness_lufs"] is not None
        assert report["program"]["measures"]["speech_loudness_lufs"] is None
        reasons = report["program"]["reasons"]
        assert "separator failed" in reasons["speech_loudness_lufs"]

    def test_custom_thresholds_change_detection(self, low_sbld_files, tmp_path):
        out = tmp_path / "out"
        # SBLD sits near -5: a -20 LU local threshold marks nothing critical
        code = run_cli("analyze", "--mix", low_sbld_files["mix"],
                       "--speech", low_sbld_files["speech"],
                       "--background", low_sbld_files["background"],
                       "--sbld-threshold", "-20", "--sld-threshold", "-30",
                       "--rules", "none", "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["program"]["measures"]["critical_speech_percentage"] == 0.0
        assert report["config"]["sbld_threshold_lu"] == -20.0

    def test_rules_file(self, program_files, tmp_path):
        rules = tmp_path / "house.rules"
        rules.write_text("preset = dpp\nmax_ldr = 0.5\n")
        out = tmp_path / "out"
        code = run_cli("analyze", "--mix", program_files["mix"],
                       "--speech", program_files["speech"],
                       "--background", program_files["background"],
                       "--rules", str(rules), "--out", str(out))
        assert code == 2  # LDR ~ 0.6 LU breaks the 0.5 LU house bound
        report = json.loads((out / "report.json").read_text())
        rules_run = {f["rule"]: f["status"] for f in report["qc"]["findings"]}
        assert rules_run["max_ldr"] == "fail"
        assert rules_run["min_sbld"] == "pass"


class TestSimulate:
    def test_synthetic_curves_and_jobs_determinism(self, tmp_path):
        args = ("simulate", "--pairs", "3", "--duration", "4", "--seed", "2",
                "--sbld-grid", "0,10", "--reproducible")
        out1, out2 = tmp_path / "j1", tmp_path / "j2"
        assert run_cli(*args, "--jobs", "1", "--out", str(out1)) == 0
        assert run_cli(*args, "--jobs", "2", "--out", str(out2)) == 0
        for name in ("gated_bias_curve.csv", "ldr_vs_sbld_curve.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        lines = (out1 / "gated_bias_curve.csv").read_text().splitlines()
        assert lines[0] == "sbld_lu,mean_lu,std_lu,n_pairs"
        assert len(lines) == 3


class TestEvaluate:
    def test_oracle_stub_reports_zero(self, tmp_path):
        stub = tmp_path / "oracle.py"
        stub.write_text(textwrap.dedent("""
            import os, shutil, sys
            shutil.copy(os.environ["SPEECHQC_TRUTH_SPEECH"], sys.argv[2])
            shutil.copy(os.environ["SPEECHQC_TRUTH_BACKGROUND"], sys.argv[3])
        """))
        out = tmp_path / "out"
        code = run_cli("evaluate", "--pairs", "2", "--duration", "4",
                       "--conditions", "0,speech_only",
                       "--separator-cmd",
                       f"{PY} {stub} {{input}} {{output_speech}} {{output_background}}",
                       "--reproducible", "--out", str(out))
        assert code == 0
        report = json.loads((out / "mae_report.json").read_text())
        measured = [e for e in report["entries"] if e["n"] > 0]
        assert measured and all(e["mae_lu"] == 0.0 for e in measured)
        assert (out / "mae_report.csv").read_text().startswith(
            "condition,measure,mae_lu,std_lu,n")

    def test_all_failures_is_an_error(self, tmp_path):
        out = tmp_path / "out"
        code = run_cli("evaluate", "--pairs", "1", "--duration", "4",
                       "--conditions", "0",
                       "--separator-cmd", f"{PY} {tmp_path / 'gone.py'} "
                       "{input} {output_speech}",
                       "--out", str(out))
        assert code == 1


def test_help_exits_zero():
    assert run_cli("--help") == 0


def test_unknown_command_is_error():
    assert run_cli("frobnicate") == 1
