"""RIFF/WAVE reading and writing.

Supports the QC-relevant subset: PCM 16/24/32-bit integer and IEEE float
32/64-bit, mono / stereo / 5.1, plain ``fmt`` or WAVE_FORMAT_EXTENSIBLE
(channel mask honoured). Reads can stream frame chunks so long programs
never have to be resident in memory at once.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .audio import LAYOUTS_BY_COUNT, AudioBuffer, resample_audio
from .errors import UnsupportedFormatError, WavParseError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Speaker-position bits from WAVEFORMATEXTENSIBLE, mapped onto the channel
# roles the meter knows. Back and side surround pairs both count as Ls/Rs.
_SPEAKER_ROLES = (
    (0x0001, "L"),
    (0x0002, "R"),
    (0x0004, "C"),
    (0x0008, "LFE"),
    (0x0010, "Ls"),
    (0x0020, "Rs"),
    (0x0200, "Ls"),
    (0x0400, "Rs"),
)

_KSDATAFORMAT_TAIL = b"\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


@dataclass
class WavInfo:
    """Parsed header of one WAV file."""

    sample_rate: int
    n_channels: int
    bits_per_sample: int
    format_tag: int  # resolved PCM / IEEE_FLOAT tag
    layout: tuple[str, ...]
    data_offset: int
    data_size: int
    block_align: int

    @property
    def n_frames(self) -> int:
        return self.data_size // self.block_align


def _layout_from_mask(mask: int, n_channels: int) -> tuple[str, ...] | None:
    roles = [role for bit, role in _SPEAKER_ROLES if mask & bit]
    if len(roles) != n_channels:
        return None
    if n_channels == 1:
        return ("M",)
    return tuple(roles)


def _resolve_layout(mask: int | None, n_channels: int) -> tuple[str, ...]:
    if mask:
        layout = _layout_from_mask(mask, n_channels)
        if layout is not None:
            return layout
    layout = LAYOUTS_BY_COUNT.get(n_channels)
    if layout is None:
        raise UnsupportedFormatError(
            f"unsupported format: channels={n_channels} (only mono, stereo, and 5.1)"
        )
    return layout


def parse_wav_header(path: str) -> WavInfo:
    """Parse the RIFF header and locate the sample data without reading it."""
    file_size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12:
            raise WavParseError(f"{path}: file too short for a RIFF header", offset=len(head))
        if head[:4] != b"RIFF":
            raise UnsupportedFormatError(
                f"{path}: unsupported container: chunk_id={head[:4]!r} (expected b'RIFF')"
            )
        if head[8:12] != b"WAVE":
            raise UnsupportedFormatError(
                f"{path}: unsupported container: form_type={head[8:12]!r} (expected b'WAVE')"
            )

        fmt: dict | None = None
        data_offset = data_size = None
        offset = 12
        while True:
            f.seek(offset)
            header = f.read(8)
            if len(header) == 0:
                break
            if len(header) < 8:
                raise WavParseError(f"{path}: truncated chunk header", offset=offset)
            chunk_id, chunk_size = struct.unpack("<4sI", header)
            body_offset = offset + 8
            if chunk_id == b"fmt ":
                body = f.read(min(chunk_size, 40))
                if len(body) < 16:
                    raise WavParseError(f"{path}: truncated fmt chunk", offset=body_offset)
                tag, channels, rate, _byte_rate, block_align, bits = struct.unpack(
                    "<HHIIHH", body[:16]
                )
                mask = None
                if tag == WAVE_FORMAT_EXTENSIBLE:
                    if len(body) < 40:
                        raise WavParseError(
                            f"{path}: extensible fmt chunk too short", offset=body_offset
                        )
                    _cb, _valid_bits, mask = struct.unpack("<HHI", body[16:24])
                    subformat = body[24:40]
                    if subformat[4:] != _KSDATAFORMAT_TAIL:
                        raise UnsupportedFormatError(
                            f"{path}: unsupported format: subformat_guid={subformat.hex()}"
                        )
                    tag = struct.unpack("<I", subformat[:4])[0]
                fmt = dict(tag=tag, channels=channels, rate=rate,
                           block_align=block_align, bits=bits, mask=mask)
            elif chunk_id == b"data":
                data_offset, data_size = body_offset, chunk_size
            # chunks are word-aligned; odd sizes get a pad byte
            offset = body_offset + chunk_size + (chunk_size & 1)

        if fmt is None:
            raise WavParseError(f"{path}: no fmt chunk found", offset=file_size)
        if data_offset is None:
            raise WavParseError(f"{path}: no data chunk found", offset=file_size)

        tag, bits = fmt["tag"], fmt["bits"]
        if tag == WAVE_FORMAT_PCM:
            if bits not in (16, 24, 32):
                raise UnsupportedFormatError(
                    f"{path}: unsupported format: bits_per_sample={bits} for PCM "
                    "(supported: 16, 24, 32)"
                )
        elif tag == WAVE_FORMAT_IEEE_FLOAT:
            if bits not in (32, 64):
                raise UnsupportedFormatError(
                    f"{path}: unsupported format: bits_per_sample={bits} for IEEE float "
                    "(supported: 32, 64)"
                )
        else:
            raise UnsupportedFormatError(
                f"{path}: unsupported format: format_tag=0x{tag:04X} "
                "(supported: PCM and IEEE float)"
            )
        if fmt["rate"] <= 0:
            raise UnsupportedFormatError(f"{path}: unsupported format: sample_rate={fmt['rate']}")

        block_align = fmt["block_align"] or fmt["channels"] * bits // 8
        expected_align = fmt["channels"] * bits // 8
        if block_align != expected_align:
            raise WavParseError(
                f"{path}: block_align={block_align} inconsistent with "
                f"{fmt['channels']} channels at {bits} bits",
                offset=data_offset,
            )
        end = data_offset + data_size
        if end > file_size:
            raise WavParseError(
                f"{path}: data chunk declares {data_size} bytes but file ends early",
                offset=file_size,
            )
        if data_size % block_align:
            raise WavParseError(
                f"{path}: data chunk holds a partial frame",
                offset=data_offset + data_size - (data_size % block_align),
            )
        layout = _resolve_layout(fmt["mask"], fmt["channels"])
        return WavInfo(
            sample_rate=fmt["rate"],
            n_channels=fmt["channels"],
            bits_per_sample=bits,
            format_tag=tag,
            layout=layout,
            data_offset=data_offset,
            data_size=data_size,
            block_align=block_align,
        )


def _decode_frames(raw: bytes, info: WavInfo) -> np.ndarray:
    """Decode interleaved frame bytes to float64 in [-1, 1], shape (frames, ch)."""
    bits, tag, ch = info.bits_per_sample, info.format_tag, info.n_channels
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        dtype = "<f4" if bits == 32 else "<f8"
        data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    elif bits == 16:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 32:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float64) / 2147483648.0
    else:  # 24-bit packed
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val = (val ^ 0x800000) - 0x800000  # sign-extend
        data = val.astype(np.float64) / 8388608.0
    return data.reshape(-1, ch)


class WavReader:
    """Sequential frame reader over one WAV file."""

    def __init__(self, path: str):
        self.path = path
        self.info = parse_wav_header(path)
        self._file = open(path, "rb")
        self._file.seek(self.info.data_offset)
        self._frames_left = self.info.n_frames

    @property
    def sample_rate(self) -> int:
        return self.info.sample_rate

    @property
    def layout(self) -> tuple[str, ...]:
        return self.info.layout

    @property
    def n_frames(self) -> int:
        return self.info.n_frames

    def read(self, n_frames: int) -> np.ndarray:
        """Read up to ``n_frames``; an empty array signals end of data."""
        n = min(n_frames, self._frames_left)
        if n <= 0:
            return np.empty((0, self.info.n_channels))
        raw = self._file.read(n * self.info.block_align)
        if len(raw) < n * self.info.block_align:
            raise WavParseError(
                f"{self.path}: data ended mid-read",
                offset=self.info.data_offset + (self.info.n_frames - self._frames_left)
                * self.info.block_align + len(raw),
            )
        self._frames_left -= n
        return _decode_frames(raw, self.info)

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_wav(path: str) -> AudioBuffer:
    """Load a whole WAV file into an :class:`AudioBuffer` at its native rate."""
    with WavReader(path) as reader:
        data = reader.read(reader.n_frames)
    return AudioBuffer(data, reader.sample_rate, reader.layout)


def load_audio(path: str, target_rate: int | None = None) -> AudioBuffer:
    """Load a WAV file, resampling to ``target_rate`` when it differs."""
    buffer = read_wav(path)
    if target_rate is not None and target_rate != buffer.sample_rate:
        buffer = resample_audio(buffer, target_rate)
    return buffer


_INT_SPECS = {
    "pcm16": (32768.0, -32768, 32767, "<i2"),
    "pcm32": (2147483648.0, -2147483648, 2147483647, "<i4"),
}


def _encode_frames(samples: np.ndarray, fmt: str) -> tuple[bytes, int, int]:
    """Return (payload, bits_per_sample, format_tag)."""
    if fmt == "float32":
        return samples.astype("<f4").tobytes(), 32, WAVE_FORMAT_IEEE_FLOAT
    if fmt == "float64":
        return samples.astype("<f8").tobytes(), 64, WAVE_FORMAT_IEEE_FLOAT
    if fmt in _INT_SPECS:
        scale, lo, hi, dtype = _INT_SPECS[fmt]
        ints = np.clip(np.rint(samples * scale), lo, hi).astype(dtype)
        bits = 16 if fmt == "pcm16" else 32
        return ints.tobytes(), bits, WAVE_FORMAT_PCM
    if fmt == "pcm24":
        ints = np.clip(np.rint(samples * 8388608.0), -8388608, 8388607).astype(np.int32)
        u = (ints & 0xFFFFFF).astype(np.uint32)
        out = np.empty(u.shape + (3,), dtype=np.uint8)
        out[..., 0] = u & 0xFF
        out[..., 1] = (u >> 8) & 0xFF
        out[..., 2] = (u >> 16) & 0xFF
        return out.tobytes(), 24, WAVE_FORMAT_PCM
    raise ValueError(f"unknown WAV sample format {fmt!r}")


_LAYOUT_MASKS = {
    ("L", "R", "C", "LFE", "Ls", "Rs"): 0x3F,
}


def write_wav(path: str, buffer: AudioBuffer, fmt: str = "float32"):
    """Write a buffer as RIFF/WAVE.

    ``fmt`` is one of pcm16 / pcm24 / pcm32 / float32 / float64. Layouts
    beyond mono and stereo are written as WAVE_FORMAT_EXTENSIBLE with the
    matching channel mask.
    """
    payload, bits, tag = _encode_frames(buffer.samples, fmt)
    ch = buffer.n_channels
    block_align = ch * bits // 8
    byte_rate = buffer.sample_rate * block_align
    extensible = ch > 2
    if extensible:
        mask = _LAYOUT_MASKS.get(buffer.layout)
        if mask is None:
            raise UnsupportedFormatError(f"no channel mask known for layout {buffer.layout}")
        subformat = struct.pack("<I", tag) + _KSDATAFORMAT_TAIL
        fmt_body = struct.pack(
            "<HHIIHHHHI", WAVE_FORMAT_EXTENSIBLE, ch, buffer.sample_rate, byte_rate,
            block_align, bits, 22, bits, mask,
        ) + subformat
    else:
        fmt_body = struct.pack(
            "<HHIIHH", tag, ch, buffer.sample_rate, byte_rate, block_align, bits
        )
    riff_size = 4 + (8 + len(fmt_body)) + (8 + len(payload))
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI4s", b"RIFF", riff_size, b"WAVE"))
        f.write(struct.pack("<4sI", b"fmt ", len(fmt_body)))
        f.write(fmt_body)
        f.write(struct.pack("<4sI", b"data", len(payload)))
        f.write(payload)
