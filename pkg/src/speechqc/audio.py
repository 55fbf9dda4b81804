"""Core audio containers: multichannel buffers and speech/background stem sets."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import AlignmentError

# Channel roles, in canonical file order. LFE is carried but weighted out of
# loudness by the meter; "M" marks single-channel material.
MONO_LAYOUT = ("M",)
STEREO_LAYOUT = ("L", "R")
SURROUND_5_1_LAYOUT = ("L", "R", "C", "LFE", "Ls", "Rs")

LAYOUTS_BY_COUNT = {
    1: MONO_LAYOUT,
    2: STEREO_LAYOUT,
    6: SURROUND_5_1_LAYOUT,
}


def db_to_gain(db: float) -> float:
    return 10.0 ** (db / 20.0)


def gain_to_db(gain: float) -> float:
    return 20.0 * math.log10(gain)


@dataclass(frozen=True)
class AudioBuffer:
    """Immutable multichannel audio: float samples in [-1, 1], shape (frames, channels)."""

    samples: np.ndarray
    sample_rate: int
    layout: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.samples, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, np.newaxis]
        if data.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ValueError("buffer needs at least one channel")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if len(self.layout) != data.shape[1]:
            raise ValueError(
                f"layout {self.layout} does not match {data.shape[1]} channels"
            )
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)

    @property
    def n_frames(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate

    def gain_db(self, db: float) -> "AudioBuffer":
        """Return a copy with a broadband gain applied."""
        return replace(self, samples=self.samples * db_to_gain(db))

    def with_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return replace(self, samples=samples)

    def pad_or_truncate(self, n_frames: int) -> "AudioBuffer":
        if n_frames == self.n_frames:
            return self
        if n_frames < self.n_frames:
            return replace(self, samples=self.samples[:n_frames])
        pad = np.zeros((n_frames - self.n_frames, self.n_channels))
        return replace(self, samples=np.vstack([self.samples, pad]))


def mono_to_layout(buffer: AudioBuffer, layout: tuple[str, ...]) -> AudioBuffer:
    """Duplicate a mono buffer into every channel of ``layout``."""
    if buffer.n_channels != 1:
        raise AlignmentError("mono_to_layout expects a single-channel buffer")
    data = np.repeat(buffer.samples, len(layout), axis=1)
    return AudioBuffer(data, buffer.sample_rate, layout)


def _check_compatible(a: AudioBuffer, b: AudioBuffer, what: str):
    if a.sample_rate != b.sample_rate:
        raise AlignmentError(
            f"{what}: sample rates differ ({a.sample_rate} vs {b.sample_rate} Hz)"
        )
    if a.layout != b.layout:
        raise AlignmentError(f"{what}: layouts differ ({a.layout} vs {b.layout})")


def derive_background(mix: AudioBuffer, speech: AudioBuffer) -> AudioBuffer:
    """Background stem as the sample-wise difference mix - speech."""
    _check_compatible(mix, speech, "derive_background")
    if mix.n_frames != speech.n_frames:
        raise AlignmentError(
            f"derive_background: lengths differ ({mix.n_frames} vs {speech.n_frames} frames)"
        )
    return mix.with_samples(mix.samples - speech.samples)


def mix_stems(speech: AudioBuffer, background: AudioBuffer) -> AudioBuffer:
    """Mix as the sample-wise sum speech + background."""
    _check_compatible(speech, background, "mix_stems")
    if speech.n_frames != background.n_frames:
        raise AlignmentError(
            f"mix_stems: lengths differ ({speech.n_frames} vs {background.n_frames} frames)"
        )
    return speech.with_samples(speech.samples + background.samples)


@dataclass
class StemSet:
    """A program as mix plus (possibly derived) speech and background stems."""

    mix: AudioBuffer | None = None
    speech: AudioBuffer | None = None
    background: AudioBuffer | None = None

    def present(self) -> list[str]:
        return [n for n in ("mix", "speech", "background") if getattr(self, n) is not None]

    def completed(self, residual_tol: float = 1e-3) -> "StemSet":
        """Derive the missing member; verify mix = speech + background when all present.

        Stems are length-aligned to the mix (shorter padded, longer truncated,
        both with a warning).
        """
        mix, speech, background = self.mix, self.speech, self.background
        present = self.present()
        if len(present) < 2:
            raise AlignmentError(
                f"need at least two of mix/speech/background, got {present or 'none'}"
            )
        ref = mix if mix is not None else (speech if speech is not None else background)
        speech = _align_to(speech, ref, "speech")
        background = _align_to(background, ref, "background")
        if mix is not None:
            mix = _align_to(mix, ref, "mix")
        if mix is None:
            mix = mix_stems(speech, background)
        elif speech is None:
            speech = derive_background(mix, background)  # speech = mix - background
        elif background is None:
            background = derive_background(mix, speech)
        else:
            residual = np.max(np.abs(mix.samples - speech.samples - background.samples))
            if residual > residual_tol:
                warnings.warn(
                    f"mix differs from speech+background by up to {residual:.3g} "
                    f"(tolerance {residual_tol:.3g})"
                )
        return StemSet(mix=mix, speech=speech, background=background)


def _align_to(buffer: AudioBuffer | None, ref: AudioBuffer, name: str) -> AudioBuffer | None:
    if buffer is None or buffer is ref:
        return buffer
    _check_compatible(buffer, ref, name)
    if buffer.n_frames > ref.n_frames:
        warnings.warn(f"{name} stem longer than reference; truncating "
                      f"({buffer.n_frames} -> {ref.n_frames} frames)")
    elif buffer.n_frames < ref.n_frames:
        warnings.warn(f"{name} stem shorter than reference; zero-padding "
                      f"({buffer.n_frames} -> {ref.n_frames} frames)")
    return buffer.pad_or_truncate(ref.n_frames)


# Resampling: polyphase windowed sinc. The Kaiser beta below gives about
# 100 dB of stopband attenuation; the long half-length keeps the transition
# band narrow enough that the attenuation actually holds near cutoff.
_RESAMPLE_BETA = 10.06
_RESAMPLE_HALF_LEN = 64


def resample_audio(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Resample to ``target_rate`` (exact rational ratio, windowed-sinc kernel)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer
    ratio = Fraction(target_rate, buffer.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    max_ud = max(up, down)
    n_taps = 2 * _RESAMPLE_HALF_LEN * max_ud + 1
    cutoff = 1.0 / max_ud  # in units of the upsampled Nyquist
    # resample_poly scales supplied coefficients by ``up`` itself
    kernel = signal.firwin(n_taps, cutoff, window=("kaiser", _RESAMPLE_BETA))
    out = signal.resample_poly(buffer.samples, up, down, axis=0, window=kernel)
    return AudioBuffer(out, target_rate, buffer.layout)


def resampled_length(n_frames: int, orig_rate: int, target_rate: int) -> int:
    """Output length of :func:`resample_audio` for a given input length."""
    ratio = Fraction(target_rate, orig_rate)
    return -(-n_frames * ratio.numerator // ratio.denominator)  # ceil
