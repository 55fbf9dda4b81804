import sys
import textwrap

import numpy as np
import pytest

from speechqc import (
    HarnessError,
    MixSpec,
    SeparatorSpec,
    evaluate_separator,
    gated_bias_curve,
    generate_corpus,
    ldr_sbld_curve,
    load_corpus,
    make_background_like,
    make_speech_like,
    mix_at_sbld,
    oracle_activity,
    sbld_integrated,
    synthetic_corpus,
)

PY = sys.executable


@pytest.fixture(scope="module")
def speech():
    return make_speech_like(8.0, seed=60)


@pytest.fixture(scope="module")
def background():
    return make_background_like(8.0, seed=61)


class TestSynthesis:
    def test_deterministic_given_seed(self):
        a = make_speech_like(2.0, seed=7)
        b = make_speech_like(2.0, seed=7)
        assert np.array_equal(a.samples, b.samples)
        c = make_speech_like(2.0, seed=8)
        assert not np.array_equal(a.samples, c.samples)

    def test_normalized_to_target(self, speech, background):
        from speechqc import integrated_loudness
        assert integrated_loudness(speech) == pytest.approx(-23.0, abs=0.05)
        assert integrated_loudness(background) == pytest.approx(-23.0, abs=0.05)

    def test_corpus_folder_round_trip(self, tmp_path):
        pairs = generate_corpus(str(tmp_path), n_pairs=2, seed=1, duration=2.0)
        assert [p.pair_id for p in pairs] == ["synth000", "synth001"]
        loaded = load_corpus(str(tmp_path))
        assert [p.pair_id for p in loaded] == ["synth000", "synth001"]
        s0, b0 = loaded[0].load()
        assert s0.sample_rate == 48000 and s0.n_channels == 2
        assert b0.n_frames == s0.n_frames

    def test_missing_corpus_layout(self, tmp_path):
        with pytest.raises(HarnessError, match="pairs/"):
            load_corpus(str(tmp_path))


class TestMixAtSbld:
    def test_equal_loudness_means_unity_gain(self, speech, background):
        # stems are both normalised to -23 LUFS; integrated SBLD over the
        # active region ~0, so a 0 LU target barely touches the background
        stems = mix_at_sbld(speech, background, MixSpec(target_sbld=0.0))
        rms_before = np.sqrt(np.mean(background.samples ** 2))
        rms_after = np.sqrt(np.mean(stems.background.samples ** 2))
        assert 20 * np.log10(rms_after / rms_before) == pytest.approx(0.0, abs=1.0)

    @pytest.mark.parametrize("target", [4.0, -10.0, 12.0])
    def test_self_consistency(self, speech, background, target):
        stems = mix_at_sbld(speech, background, MixSpec(target_sbld=target))
        activity = oracle_activity(stems.speech)
        measured = sbld_integrated(stems.speech, stems.background, activity)
        assert measured == pytest.approx(target, abs=0.1)

    def test_minus_ten_gain_arithmetic(self, speech, background):
        activity = oracle_activity(speech)
        initial = sbld_integrated(speech, background, activity)
        stems = mix_at_sbld(speech, background, MixSpec(target_sbld=-10.0))
        gain_db = 20 * np.log10(
            np.sqrt(np.mean(stems.background.samples ** 2))
            / np.sqrt(np.mean(background.samples ** 2)))
        assert gain_db == pytest.approx(initial + 10.0, abs=0.1)

    def test_silent_stem_rejected(self, speech, background):
        silent = background.with_samples(np.zeros_like(background.samples))
        with pytest.raises(HarnessError, match="silent"):
            mix_at_sbld(speech, silent, MixSpec(target_sbld=0.0))

    def test_mix_is_sum_of_stems(self, speech, background):
        stems = mix_at_sbld(speech, background, MixSpec(target_sbld=4.0))
        assert np.array_equal(stems.mix.samples,
                              stems.speech.samples + stems.background.samples)


@pytest.fixture(scope="module")
def small_corpus():
    return synthetic_corpus(5, seed=3, duration=6.0)


class TestCurves:

    def test_bias_curve_matches_energy_oracle(self, small_corpus):
        curve = gated_bias_curve(small_corpus, [0.0, 20.0])
        # uncorrelated stems: bias(SBLD) ~ 10*log10(1 + 10^(-SBLD/10))
        assert curve.mean[0] == pytest.approx(10 * np.log10(2.0), abs=0.5)
        assert curve.mean[1] <= 0.5
        assert curve.mean[0] > curve.mean[1]
        assert curve.n_pairs == [5, 5]
        assert not curve.failures

    def test_ldr_curve_matches_energy_oracle(self, small_corpus):
        curve = ldr_sbld_curve(small_corpus, [-10.0, 0.0, 20.0])
        predicted = [10 * np.log10(1 + 10 ** (-s / 10)) for s in (-10.0, 0.0, 20.0)]
        for measured, expected in zip(curve.mean, predicted):
            assert measured == pytest.approx(expected, abs=1.0)

    def test_deterministic_across_jobs(self, small_corpus):
        serial = gated_bias_curve(small_corpus, [0.0, 10.0], jobs=1)
        parallel = gated_bias_curve(small_corpus, [0.0, 10.0], jobs=2)
        assert serial.mean == parallel.mean
        assert serial.std == parallel.std

    def test_empty_corpus_rejected(self):
        with pytest.raises(HarnessError, match="empty"):
            gated_bias_curve([], [0.0])


@pytest.fixture(scope="module")
def disk_corpus(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("corpus")
    return str(tmp), generate_corpus(str(tmp), n_pairs=2, seed=5, duration=6.0)


class TestEvaluateSeparator:

    def test_oracle_separator_has_zero_mae(self, tmp_path, disk_corpus):
        _, pairs = disk_corpus
        # the harness exports the exact condition stems through the
        # environment; an oracle stub just hands them back
        script = tmp_path / "oracle_sep.py"
        script.write_text(textwrap.dedent("""
            import os, shutil, sys
            shutil.copy(os.environ["SPEECHQC_TRUTH_SPEECH"], sys.argv[2])
            shutil.copy(os.environ["SPEECHQC_TRUTH_BACKGROUND"], sys.argv[3])
        """))
        spec = SeparatorSpec(f"{PY} {script} {{input}} {{output_speech}} "
                             "{output_background}")
        report = evaluate_separator(pairs, spec, [0.0, 6.0])
        for entry in report.entries:
            if entry.n:
                assert entry.mae == 0.0, entry.measure
                assert entry.std == 0.0, entry.measure
        assert not report.failures

    def test_mix_as_speech_overestimates_at_low_sbld(self, tmp_path, disk_corpus):
        _, pairs = disk_corpus
        script = tmp_path / "identity_sep.py"
        script.write_text(textwrap.dedent("""
            import shutil, sys
            shutil.copy(sys.argv[1], sys.argv[2])
        """))
        spec = SeparatorSpec(f"{PY} {script} {{input}} {{output_speech}}")
        report = evaluate_separator(pairs, spec, [0.0])
        entry = report.entry("sbld_+0", "integrated_sl")
        assert entry.n == len(pairs)
        assert entry.mae == pytest.approx(10 * np.log10(2.0), abs=0.6)

    def test_failures_counted_and_excluded(self, tmp_path, disk_corpus):
        _, pairs = disk_corpus
        bad = SeparatorSpec(f"{PY} {tmp_path / 'missing.py'} {{input}} {{output_speech}}")
        report = evaluate_separator(pairs, bad, [0.0, "speech_only"])
        assert len(report.failures) == len(pairs) * 2
        assert all(entry.n == 0 for entry in report.entries)

    def test_speech_only_condition_reports_sl_not_sbld(self, tmp_path, disk_corpus):
        _, pairs = disk_corpus
        script = tmp_path / "identity2.py"
        script.write_text("import shutil, sys\nshutil.copy(sys.argv[1], sys.argv[2])\n")
        spec = SeparatorSpec(f"{PY} {script} {{input}} {{output_speech}}")
        report = evaluate_separator(pairs, spec, ["speech_only"])
        sl = report.entry("speech_only", "integrated_sl")
        sbld = report.entry("speech_only", "integrated_sbld")
        assert sl.n == len(pairs)
        assert sl.mae == pytest.approx(0.0, abs=1e-9)  # mix IS the speech here
        assert sbld.n == 0 and sbld.mae is None

    def test_overall_pools_conditions(self, tmp_path, disk_corpus):
        _, pairs = disk_corpus
        script = tmp_path / "identity3.py"
        script.write_text("import shutil, sys\nshutil.copy(sys.argv[1], sys.argv[2])\n")
        spec = SeparatorSpec(f"{PY} {script} {{input}} {{output_speech}}")
        report = evaluate_separator(pairs, spec, [0.0, 10.0])
        overall = report.entry("overall", "integrated_sl")
        assert overall.n == 2 * len(pairs)
