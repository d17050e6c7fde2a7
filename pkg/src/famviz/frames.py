"""Per-frame embedding sequences and the binary frame file container.

Layout (little-endian)::

    magic "FVFR" | u32 version=1 | u32 dim | u32 n_frames | f32 hop_s | f32 window_s
    n_frames x [dim x f32 embedding][f32 energy, NaN if absent][u8 has_probs]
               [if has_probs: 16 x f32 = 5 SD + 3 CHN + 4 FAN + 4 MAN]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, MalformedInputError
from .timeline import N_PROBS, FrameGrid

MAGIC = b"FVFR"
VERSION = 1
_HEADER = struct.Struct("<4sIIIff")


@dataclass
class FrameSequence:
    grid: FrameGrid
    vectors: np.ndarray
    energy: np.ndarray | None = None
    probs: np.ndarray | None = None
    family_id: str = ""
    source_offset: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise MalformedInputError("vectors must be an n_frames x dim matrix")
        n = self.vectors.shape[0]
        if self.grid.n_frames != n:
            self.grid = FrameGrid(self.grid.window_len, self.grid.hop, n)
        if not np.all(np.isfinite(self.vectors)):
            raise MalformedInputError("embedding vectors must be finite")
        if self.energy is not None:
            self.energy = np.asarray(self.energy, dtype=np.float32)
            if self.energy.shape != (n,):
                raise MalformedInputError("energy needs one value per frame")
        if self.probs is not None:
            self.probs = np.asarray(self.probs, dtype=np.float32)
            if self.probs.shape != (n, N_PROBS):
                raise MalformedInputError(f"probs must be n_frames x {N_PROBS}")

    @property
    def n_frames(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def has_probs(self) -> np.ndarray:
        if self.probs is None:
            return np.zeros(self.n_frames, dtype=bool)
        return ~np.isnan(self.probs).any(axis=1)


def _f32_seconds(x: float) -> float:
    # f32 header fields: recover the decimal value that was written
    return float(f"{x:.7g}")


def encode_frames(seq: FrameSequence) -> bytes:
    n, dim = seq.n_frames, seq.dim
    energy = seq.energy if seq.energy is not None else np.full(n, np.nan, dtype=np.float32)
    flags = seq.has_probs()
    parts = [_HEADER.pack(MAGIC, VERSION, dim, n, seq.grid.hop, seq.grid.window_len)]
    base = np.zeros(n, dtype=[("v", "<f4", (dim,)), ("e", "<f4"), ("p", "u1")])
    base["v"] = seq.vectors
    base["e"] = energy
    base["p"] = flags
    if not flags.any():
        parts.append(base.tobytes())
    else:
        probs = seq.probs.astype("<f4")
        for i in range(n):
            parts.append(base[i:i + 1].tobytes())
            if flags[i]:
                parts.append(probs[i].tobytes())
    return b"".join(parts)


def decode_frames(data: bytes, family_id: str = "", source: str = "<frames>") -> FrameSequence:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated header", chunk="header")
    magic, version, dim, n, hop, window = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}", chunk="magic")
    if version != VERSION:
        raise FormatError(f"{source}: format version {version}, expected {VERSION}", chunk="version")
    grid = FrameGrid(_f32_seconds(window), _f32_seconds(hop), n)
    rec = np.dtype([("v", "<f4", (dim,)), ("e", "<f4"), ("p", "u1")])
    body = memoryview(data)[_HEADER.size:]
    probs = None
    if len(body) == n * rec.itemsize:
        recs = np.frombuffer(body, dtype=rec, count=n)
        if recs["p"].any():
            raise FormatError(f"{source}: record flags claim probabilities that are absent", chunk="records")
        vectors, energy = recs["v"].copy(), recs["e"].copy()
    else:
        vectors = np.empty((n, dim), dtype=np.float32)
        energy = np.empty(n, dtype=np.float32)
        probs = np.full((n, N_PROBS), np.nan, dtype=np.float32)
        pos = 0
        for i in range(n):
            if pos + rec.itemsize > len(body):
                raise FormatError(f"{source}: truncated at record {i}", chunk="records")
            r = np.frombuffer(body, dtype=rec, count=1, offset=pos)[0]
            pos += rec.itemsize
            vectors[i], energy[i] = r["v"], r["e"]
            if r["p"] == 1:
                if pos + 4 * N_PROBS > len(body):
                    raise FormatError(f"{source}: truncated probabilities at record {i}", chunk="records")
                probs[i] = np.frombuffer(body, dtype="<f4", count=N_PROBS, offset=pos)
                pos += 4 * N_PROBS
            elif r["p"] != 0:
                raise FormatError(f"{source}: bad has_probs flag at record {i}", chunk="records")
        if pos != len(body):
            raise FormatError(f"{source}: {len(body) - pos} trailing bytes", chunk="records")
    if np.isnan(energy).all():
        energy = None
    return FrameSequence(grid, vectors, energy, probs, family_id=family_id)


def write_frames(seq: FrameSequence, path) -> None:
    Path(path).write_bytes(encode_frames(seq))


def read_frames(path, family_id: str | None = None) -> FrameSequence:
    path = Path(path)
    return decode_frames(path.read_bytes(), family_id or path.stem, source=str(path))
