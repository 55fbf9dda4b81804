"""Adapter for external speech-separation executables.

No model lives here: when production stems are missing, the mix is handed
to a user-supplied command over temporary WAV files and the returned
speech (and optionally background) stems are validated and aligned. Any
separator that can be invoked as ``cmd IN OUT_SPEECH [OUT_BACKGROUND]``
plugs in through a command template.
"""
from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .audio import AudioBuffer, StemSet, derive_background
from .errors import (
    SeparatorCommandError,
    SeparatorOutputError,
    SeparatorTimeoutError,
    SpeechQcError,
)
from .wavio import read_wav, write_wav

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 600.0


@dataclass(frozen=True)
class SeparatorSpec:
    """How to launch a separation command.

    ``command_template`` must reference ``{input}`` and ``{output_speech}``;
    ``{output_background}`` is optional. Placeholders are substituted per
    shell token, so paths with spaces survive.
    """

    command_template: str
    timeout_s: float = DEFAULT_TIMEOUT_S
    expected_rate: int | None = None

    def __post_init__(self):
        if "{input}" not in self.command_template:
            raise ValueError("command template must contain {input}")
        if "{output_speech}" not in self.command_template:
            raise ValueError("command template must contain {output_speech}")

    @property
    def emits_background(self) -> bool:
        return "{output_background}" in self.command_template


def _load_stem(path: Path, mix: AudioBuffer, spec: SeparatorSpec, name: str) -> AudioBuffer:
    if not path.exists():
        raise SeparatorOutputError(f"separator did not write the {name} stem ({path})")
    try:
        stem = read_wav(str(path))
    except SpeechQcError as exc:
        raise SeparatorOutputError(f"separator wrote a malformed {name} stem: {exc}") from exc
    expected_rate = spec.expected_rate or mix.sample_rate
    if stem.sample_rate != expected_rate:
        raise SeparatorOutputError(
            f"{name} stem is at {stem.sample_rate} Hz, expected {expected_rate} Hz")
    if stem.layout != mix.layout:
        raise SeparatorOutputError(
            f"{name} stem layout {stem.layout} does not match the mix {mix.layout}")
    if stem.n_frames != mix.n_frames:
        log.warning("%s stem is %d frames, mix is %d; aligning to the mix",
                    name, stem.n_frames, mix.n_frames)
        stem = stem.pad_or_truncate(mix.n_frames)
    return stem


def separate(mix: AudioBuffer, spec: SeparatorSpec,
             workdir: str | None = None,
             env: dict[str, str] | None = None) -> StemSet:
    """Run the external separator on ``mix`` and return the full stem set.

    The input mix is never modified. The background stem comes from the
    separator when the template asks for one, otherwise it is derived as
    mix minus speech. ``env`` entries are layered over the inherited
    environment (the evaluation harness uses this to point oracle stubs at
    ground-truth stems).
    """
    with tempfile.TemporaryDirectory(prefix="speechqc-sep-", dir=workdir) as tmp:
        tmp_path = Path(tmp)
        input_path = tmp_path / "input.wav"
        speech_path = tmp_path / "speech.wav"
        background_path = tmp_path / "background.wav"
        write_wav(str(input_path), mix, fmt="float64")

        fills = {
            "input": str(input_path),
            "output_speech": str(speech_path),
            "output_background": str(background_path),
        }
        command = [token.format(**fills) for token in shlex.split(spec.command_template)]
        log.info("running separator: %s", " ".join(command))
        run_env = None
        if env:
            run_env = dict(os.environ)
            run_env.update(env)
        try:
            proc = subprocess.run(
                command, capture_output=True, text=True, timeout=spec.timeout_s,
                env=run_env)
        except subprocess.TimeoutExpired as exc:
            raise SeparatorTimeoutError(
                f"separator exceeded {spec.timeout_s:g} s") from exc
        except OSError as exc:
            raise SeparatorCommandError(f"could not launch separator: {exc}") from exc
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-5:]
            raise SeparatorCommandError(
                f"separator exited with status {proc.returncode}: "
                + (" | ".join(tail) if tail else "(no output)"))

        speech = _load_stem(speech_path, mix, spec, "speech")
        if spec.emits_background and background_path.exists():
            background = _load_stem(background_path, mix, spec, "background")
        else:
            background = derive_background(mix, speech)
        return StemSet(mix=mix, speech=speech, background=background)
