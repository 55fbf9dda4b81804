import numpy as np
import pytest

from speechqc import AudioBuffer, MixSpec, make_background_like, make_speech_like, mix_at_sbld

FS = 48000
STEREO = ("L", "R")


def stereo_sine(freq=997.0, level_dbfs=-23.0, seconds=10.0, fs=FS, phase=0.0):
    amp = 10 ** (level_dbfs / 20)
    t = np.arange(round(fs * seconds)) / fs
    x = amp * np.sin(2 * np.pi * freq * t + phase)
    return AudioBuffer(np.stack([x, x], axis=1), fs, STEREO)


def stereo_noise(seconds=5.0, level=0.05, fs=FS, seed=0):
    rng = np.random.default_rng(seed)
    return AudioBuffer(rng.standard_normal((round(fs * seconds), 2)) * level, fs, STEREO)


@pytest.fixture(scope="session")
def speech_stem():
    return make_speech_like(8.0, seed=11)


@pytest.fixture(scope="session")
def background_stem():
    return make_background_like(8.0, seed=11)


@pytest.fixture(scope="session")
def stems_at_4lu(speech_stem, background_stem):
    return mix_at_sbld(speech_stem, background_stem, MixSpec(target_sbld=4.0))
