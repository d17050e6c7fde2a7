"""WAV parsing, per-frame RMS energy and the key-child silence threshold."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import FormatError, InsufficientDataError, MalformedInputError
from .timeline import FrameGrid

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# threshold sits this factor below the quietest key-child frame
THRESHOLD_MARGIN = 0.99


@dataclass(frozen=True)
class PcmClip:
    sample_rate: int
    samples: np.ndarray
    channels: int = 1

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise MalformedInputError("sample_rate must be positive")
        if self.channels != 1:
            raise MalformedInputError("clips are mono after mixdown")
        if not np.all(np.isfinite(self.samples)):
            raise MalformedInputError("samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class EnergyTrack:
    grid: FrameGrid
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.grid.n_frames:
            raise MalformedInputError("energy track length differs from grid")


def _chunks(data: bytes):
    pos = 12
    while pos < len(data):
        if pos + 8 > len(data):
            raise FormatError(f"truncated chunk header at byte {pos}", chunk="header")
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        name = cid.decode("latin-1")
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"'{name}' chunk is truncated ({len(body)} of {size} bytes)", chunk=name)
        yield name, body
        pos += 8 + size + (size & 1)


def read_wav(data: bytes) -> PcmClip:
    """Parse a RIFF/WAVE byte string (16-bit PCM or 32-bit float) to mono."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE container", chunk="RIFF")
    fmt = body = None
    for name, chunk in _chunks(data):
        if name == "fmt ":
            fmt = chunk
        elif name == "data":
            body = chunk
            if fmt is not None:
                break
    if fmt is None:
        raise FormatError("missing 'fmt ' chunk", chunk="fmt ")
    if len(fmt) < 16:
        raise FormatError("'fmt ' chunk is truncated", chunk="fmt ")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise FormatError("extensible 'fmt ' chunk is truncated", chunk="fmt ")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if body is None:
        raise FormatError("missing 'data' chunk", chunk="data")
    if channels not in (1, 2):
        raise FormatError(f"'fmt ' chunk: {channels} channels not supported", chunk="fmt ")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise FormatError(f"'fmt ' chunk: unsupported codec (format tag {tag:#06x}, {bits} bits)", chunk="fmt ")
    if block_align != channels * dtype.itemsize:
        raise FormatError(f"'fmt ' chunk: block align {block_align} inconsistent with format", chunk="fmt ")
    n = len(body) // block_align
    raw = np.frombuffer(body[:n * block_align], dtype=dtype).astype(np.float64) * scale
    samples = raw.reshape(n, channels).mean(axis=1)
    return PcmClip(int(rate), samples)


def read_wav_file(path) -> PcmClip:
    with open(path, "rb") as fh:
        return read_wav(fh.read())


def write_wav(clip: PcmClip, bits: int = 16) -> bytes:
    """Encode a mono clip as 16-bit PCM or 32-bit float WAV bytes."""
    if bits == 16:
        pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        tag = WAVE_FORMAT_PCM
    elif bits == 32:
        pcm = clip.samples.astype("<f4")
        tag = WAVE_FORMAT_IEEE_FLOAT
    else:
        raise ValueError("bits must be 16 or 32")
    payload = pcm.tobytes()
    width = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * width, width, bits)
    return (b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)


def frame_energy(clip: PcmClip, grid: FrameGrid | None = None) -> EnergyTrack:
    """RMS of each complete window; trailing partial windows are dropped.

    ``grid.n_frames`` is ignored; the frame count follows from the clip.
    """
    grid = grid or FrameGrid()
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size == 0:
        raise MalformedInputError("clip is empty")
    win = int(round(grid.window_len * clip.sample_rate))
    hop = int(round(grid.hop * clip.sample_rate))
    if win < 1 or hop < 1:
        raise MalformedInputError("grid is finer than one sample")
    if x.size < win:
        raise MalformedInputError(
            f"clip lasts {clip.duration:.3f}s, shorter than one {grid.window_len}s window"
        )
    n = (x.size - win) // hop + 1
    values = np.empty(n)
    for i in range(n):
        seg = x[i * hop:i * hop + win]
        values[i] = np.sqrt(np.dot(seg, seg) / win)
    return EnergyTrack(FrameGrid(grid.window_len, grid.hop, n), values)


def derive_energy_threshold(energy: EnergyTrack | np.ndarray, chn_frames: Iterable[int]) -> float:
    """Silence threshold just below the quietest key-child frame."""
    values = energy.values if isinstance(energy, EnergyTrack) else np.asarray(energy)
    idx = sorted(set(int(i) for i in chn_frames))
    if not idx:
        raise InsufficientDataError("no CHN frames to derive an energy threshold from")
    return THRESHOLD_MARGIN * float(np.min(values[idx]))
