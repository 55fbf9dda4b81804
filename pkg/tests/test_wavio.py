import numpy as np
import pytest

import oracle
from speechqc import (
    AudioBuffer,
    UnsupportedFormatError,
    WavParseError,
    load_audio,
    read_wav,
    resample_audio,
    write_wav,
)
from speechqc.wavio import WavReader, parse_wav_header

FS = 48000


def test_full_scale_int16_normalization(tmp_path):
    path = tmp_path / "full.wav"
    data = np.array([[32767, -32768], [0, 1]], dtype="<i2")
    _write_pcm16_raw(path, data, FS)
    buf = load_audio(str(path))
    assert buf.samples[0, 0] == pytest.approx(32767 / 32768, abs=0)
    assert buf.samples[0, 1] == -1.0
    assert buf.samples[1, 1] == pytest.approx(1 / 32768, abs=0)
    assert buf.layout == ("L", "R")


def test_24bit_mono_silence(tmp_path):
    path = tmp_path / "sil24.wav"
    silence = AudioBuffer(np.zeros((FS, 1)), FS, ("M",))
    write_wav(str(path), silence, fmt="pcm24")
    loaded = read_wav(str(path))
    assert loaded.n_channels == 1
    assert loaded.layout == ("M",)
    assert np.all(loaded.samples == 0.0)


@pytest.mark.parametrize("fmt", ["pcm16", "pcm24", "pcm32"])
def test_integer_pcm_round_trip_exact(tmp_path, fmt):
    rng = np.random.default_rng(3)
    data = rng.uniform(-0.9, 0.9, size=(1000, 2))
    path = tmp_path / f"{fmt}.wav"
    write_wav(str(path), AudioBuffer(data, FS, ("L", "R")), fmt=fmt)
    first = read_wav(str(path))
    path2 = tmp_path / f"{fmt}_again.wav"
    write_wav(str(path2), first, fmt=fmt)
    second = read_wav(str(path2))
    assert np.array_equal(first.samples, second.samples)


@pytest.mark.parametrize("fmt", ["float32", "float64"])
def test_float_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(4)
    data = rng.uniform(-1, 1, size=(500, 2))
    if fmt == "float32":
        data = data.astype(np.float32).astype(np.float64)
    path = tmp_path / f"{fmt}.wav"
    write_wav(str(path), AudioBuffer(data, FS, ("L", "R")), fmt=fmt)
    assert np.array_equal(read_wav(str(path)).samples, data)


def test_5_1_extensible_round_trip(tmp_path):
    layout = ("L", "R", "C", "LFE", "Ls", "Rs")
    rng = np.random.default_rng(5)
    data = rng.uniform(-0.5, 0.5, size=(200, 6))
    path = tmp_path / "surround.wav"
    write_wav(str(path), AudioBuffer(data, FS, layout), fmt="float64")
    info = parse_wav_header(str(path))
    assert info.layout == layout
    assert np.array_equal(read_wav(str(path)).samples, data)


def test_resample_length_matches_rational_arithmetic(tmp_path):
    n = 44100 * 3 + 7
    buf = AudioBuffer(np.random.default_rng(6).standard_normal((n, 2)) * 0.1,
                      44100, ("L", "R"))
    out = resample_audio(buf, 48000)
    expected = oracle.resampled_length(n, 44100, 48000)
    assert abs(out.n_frames - expected) <= 1
    assert out.sample_rate == 48000


def test_resample_preserves_tone_level():
    t = np.arange(44100 * 2) / 44100
    x = 0.25 * np.sin(2 * np.pi * 1000 * t)
    buf = AudioBuffer(np.stack([x, x], axis=1), 44100, ("L", "R"))
    out = resample_audio(buf, 48000)
    # ignore filter edges
    core = out.samples[4800:-4800, 0]
    rms_in = np.sqrt(np.mean(x ** 2))
    rms_out = np.sqrt(np.mean(core ** 2))
    assert 20 * np.log10(rms_out / rms_in) == pytest.approx(0.0, abs=0.05)


def test_load_audio_resamples_when_asked(tmp_path):
    path = tmp_path / "a.wav"
    buf = AudioBuffer(np.zeros((44100, 1)), 44100, ("M",))
    write_wav(str(path), buf, fmt="pcm16")
    out = load_audio(str(path), target_rate=48000)
    assert out.sample_rate == 48000
    assert abs(out.n_frames - 48000) <= 1


def test_unsupported_bit_depth(tmp_path):
    path = tmp_path / "u8.wav"
    _write_raw_fmt(path, format_tag=1, channels=1, rate=FS, bits=8, payload=b"\x80" * 100)
    with pytest.raises(UnsupportedFormatError, match="bits_per_sample=8"):
        parse_wav_header(str(path))


def test_unsupported_codec_named(tmp_path):
    path = tmp_path / "mp3ish.wav"
    _write_raw_fmt(path, format_tag=0x0055, channels=2, rate=FS, bits=16, payload=b"\x00" * 64)
    with pytest.raises(UnsupportedFormatError, match="format_tag=0x0055"):
        parse_wav_header(str(path))


def test_unsupported_channel_count(tmp_path):
    path = tmp_path / "three.wav"
    _write_raw_fmt(path, format_tag=1, channels=3, rate=FS, bits=16, payload=b"\x00" * 96)
    with pytest.raises(UnsupportedFormatError, match="channels=3"):
        parse_wav_header(str(path))


def test_truncated_data_reports_offset(tmp_path):
    path = tmp_path / "trunc.wav"
    buf = AudioBuffer(np.zeros((1000, 2)), FS, ("L", "R"))
    write_wav(str(path), buf, fmt="pcm16")
    whole = path.read_bytes()
    path.write_bytes(whole[:-100])  # drop the tail of the data chunk
    with pytest.raises(WavParseError, match="byte offset") as err:
        parse_wav_header(str(path))
    assert err.value.offset == len(whole) - 100


def test_truncated_header(tmp_path):
    path = tmp_path / "stub.wav"
    path.write_bytes(b"RIFF\x00\x00")
    with pytest.raises(WavParseError):
        parse_wav_header(str(path))


def test_not_riff(tmp_path):
    path = tmp_path / "x.wav"
    path.write_bytes(b"OggS" + b"\x00" * 40)
    with pytest.raises(UnsupportedFormatError, match="chunk_id"):
        parse_wav_header(str(path))


def test_streaming_reader_matches_whole_read(tmp_path):
    rng = np.random.default_rng(7)
    data = rng.uniform(-0.5, 0.5, size=(12345, 2))
    path = tmp_path / "stream.wav"
    write_wav(str(path), AudioBuffer(data, FS, ("L", "R")), fmt="float64")
    whole = read_wav(str(path)).samples
    pieces = []
    with WavReader(str(path)) as reader:
        while True:
            chunk = reader.read(1000)
            if chunk.shape[0] == 0:
                break
            pieces.append(chunk)
    assert np.array_equal(np.vstack(pieces), whole)


def _write_pcm16_raw(path, ints, rate):
    import struct
    payload = ints.astype("<i2").tobytes()
    ch = ints.shape[1]
    fmt = struct.pack("<HHIIHH", 1, ch, rate, rate * ch * 2, ch * 2, 16)
    _write_riff(path, fmt, payload)


def _write_raw_fmt(path, format_tag, channels, rate, bits, payload):
    import struct
    align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", format_tag, channels, rate, rate * align, align, bits)
    _write_riff(path, fmt, payload)


def _write_riff(path, fmt_body, payload):
    import struct
    with open(path, "wb") as f:
        riff = 4 + 8 + len(fmt_body) + 8 + len(payload)
        f.write(struct.pack("<4sI4s", b"RIFF", riff, b"WAVE"))
        f.write(struct.pack("<4sI", b"fmt ", len(fmt_body)))
        f.write(fmt_body)
        f.write(struct.pack("<4sI", b"data", len(payload)))
        f.write(payload)
