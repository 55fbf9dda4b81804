"""Exception types shared across the package."""


class SpeechQcError(Exception):
    """Base class for all speechqc errors."""


class UnsupportedFormatError(SpeechQcError):
    """Audio container or codec outside the supported WAV subset."""


class WavParseError(SpeechQcError):
    """Malformed or truncated WAV file.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class AlignmentError(SpeechQcError):
    """Buffers disagree on rate, layout, or length where they must match."""


class SidecarError(SpeechQcError):
    """Invalid speech-activity sidecar; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProgramTooShortError(SpeechQcError):
    """Signal shorter than the analysis window it was asked to fill."""


class SeparatorError(SpeechQcError):
    """Base class for external source-separation failures."""


class SeparatorCommandError(SeparatorError):
    """Separator process exited nonzero."""


class SeparatorTimeoutError(SeparatorError):
    """Separator process exceeded its time budget."""


class SeparatorOutputError(SeparatorError):
    """Separator produced missing, malformed, or mismatched stems."""


class HarnessError(SpeechQcError):
    """Experiment harness could not complete (silent stems, failed pairs...)."""


class ConfigError(SpeechQcError):
    """Invalid configuration file or option combination."""
