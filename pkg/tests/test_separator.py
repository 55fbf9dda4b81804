import sys
import textwrap

import numpy as np
import pytest

from conftest import FS, STEREO
from speechqc import (
    AudioBuffer,
    SeparatorCommandError,
    SeparatorOutputError,
    SeparatorSpec,
    SeparatorTimeoutError,
    integrated_loudness,
    make_background_like,
    make_speech_like,
    mix_at_sbld,
    MixSpec,
    separate,
    speech_loudness,
    write_wav,
)

PY = sys.executable


def make_stub(tmp_path, name, body) -> str:
    """Write a small separator script; returns a command template prefix."""
    script = tmp_path / name
    script.write_text(textwrap.dedent(body))
    return f"{PY} {script}"


def copy_stub(tmp_path, name="identity.py"):
    return make_stub(tmp_path, name, """
        import shutil, sys
        shutil.copy(sys.argv[1], sys.argv[2])  # speech := mix
    """)


def oracle_stub(tmp_path, speech_path, background_path):
    return make_stub(tmp_path, "oracle.py", f"""
        import shutil, sys
        shutil.copy({str(speech_path)!r}, sys.argv[2])
        shutil.copy({str(background_path)!r}, sys.argv[3])
    """)


@pytest.fixture(scope="module")
def stems(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("stems")
    speech = make_speech_like(6.0, seed=50)
    background = make_background_like(6.0, seed=50)
    built = mix_at_sbld(speech, background, MixSpec(target_sbld=5.0))
    paths = {}
    for name in ("mix", "speech", "background"):
        path = tmp / f"{name}.wav"
        write_wav(str(path), getattr(built, name), fmt="float64")
        paths[name] = path
    return built, paths


def test_template_must_reference_placeholders():
    with pytest.raises(ValueError, match="{input}"):
        SeparatorSpec(command_template="separate.sh out.wav")
    with pytest.raises(ValueError, match="{output_speech}"):
        SeparatorSpec(command_template="separate.sh {input}")


def test_identity_separator_speech_equals_mix(tmp_path, stems):
    built, _ = stems
    spec = SeparatorSpec(f"{copy_stub(tmp_path)} {{input}} {{output_speech}}")
    out = separate(built.mix, spec)
    assert np.array_equal(out.speech.samples, built.mix.samples)
    assert np.max(np.abs(out.background.samples)) < 1e-12
    assert speech_loudness(out.speech) == pytest.approx(
        integrated_loudness(built.mix), abs=1e-9)


def test_oracle_separator_recovers_exact_stems(tmp_path, stems):
    built, paths = stems
    cmd = oracle_stub(tmp_path, paths["speech"], paths["background"])
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}} {{output_background}}")
    out = separate(built.mix, spec)
    assert np.array_equal(out.speech.samples, built.speech.samples)
    assert np.array_equal(out.background.samples, built.background.samples)


def test_mix_buffer_is_never_altered(tmp_path, stems):
    built, _ = stems
    before = np.array(built.mix.samples)
    spec = SeparatorSpec(f"{copy_stub(tmp_path)} {{input}} {{output_speech}}")
    out = separate(built.mix, spec)
    assert out.mix is built.mix
    assert np.array_equal(built.mix.samples, before)


def test_rate_mismatch_rejected(tmp_path, stems):
    built, _ = stems
    cmd = make_stub(tmp_path, "wrongrate.py", """
        import sys
        from speechqc import AudioBuffer, read_wav, write_wav
        mix = read_wav(sys.argv[1])
        wrong = AudioBuffer(mix.samples[::2], 44100, mix.layout)
        write_wav(sys.argv[2], wrong)
    """)
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}}")
    with pytest.raises(SeparatorOutputError, match="44100 Hz, expected 48000"):
        separate(built.mix, spec)


def test_nonzero_exit_surfaces_stderr(tmp_path, stems):
    built, _ = stems
    cmd = make_stub(tmp_path, "boom.py", """
        import sys
        print("model checkpoint missing", file=sys.stderr)
        sys.exit(3)
    """)
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}}")
    with pytest.raises(SeparatorCommandError, match="status 3.*checkpoint"):
        separate(built.mix, spec)


def test_missing_output_detected(tmp_path, stems):
    built, _ = stems
    cmd = make_stub(tmp_path, "noop.py", "import sys\n")
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}}")
    with pytest.raises(SeparatorOutputError, match="did not write"):
        separate(built.mix, spec)


def test_timeout_enforced(tmp_path, stems):
    built, _ = stems
    cmd = make_stub(tmp_path, "slow.py", """
        import time
        time.sleep(30)
    """)
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}}", timeout_s=0.5)
    with pytest.raises(SeparatorTimeoutError):
        separate(built.mix, spec)


def test_malformed_output_rejected(tmp_path, stems):
    built, _ = stems
    cmd = make_stub(tmp_path, "garbage.py", """
        import sys
        open(sys.argv[2], "wb").write(b"not a wav file at all")
    """)
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}}")
    with pytest.raises(SeparatorOutputError, match="malformed"):
        separate(built.mix, spec)


def test_short_stem_padded_to_mix(tmp_path, stems):
    built, _ = stems
    cmd = make_stub(tmp_path, "short.py", """
        import sys
        from speechqc import read_wav, write_wav
        mix = read_wav(sys.argv[1])
        write_wav(sys.argv[2], mix.pad_or_truncate(mix.n_frames // 2))
    """)
    spec = SeparatorSpec(f"{cmd} {{input}} {{output_speech}}")
    out = separate(built.mix, spec)
    assert out.speech.n_frames == built.mix.n_frames
