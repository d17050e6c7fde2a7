"""Label streams over time: frame labeling, machine-label decoding and
conflict resolution.

Times are in seconds. Grid-derived times are snapped to 1e-9 s so that
values like ``3 * 0.2`` compare equal to their decimal spelling.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedInputError

EPS = 1e-9


class SpeakerTier(str, Enum):
    SIL = "SIL"
    CHN = "CHN"
    FAN = "FAN"
    MAN = "MAN"
    CXN = "CXN"


class VocalClass(str, Enum):
    CRY = "CRY"
    FUS = "FUS"
    BAB = "BAB"
    CDS = "CDS"
    ADS = "ADS"
    LAU = "LAU"
    SNG = "SNG"
    CXN = "CXN"


TIER_CLASSES: dict[SpeakerTier, tuple[VocalClass, ...]] = {
    SpeakerTier.CHN: (VocalClass.CRY, VocalClass.FUS, VocalClass.BAB),
    SpeakerTier.FAN: (VocalClass.CDS, VocalClass.ADS, VocalClass.LAU, VocalClass.SNG),
    SpeakerTier.MAN: (VocalClass.CDS, VocalClass.ADS, VocalClass.LAU, VocalClass.SNG),
    SpeakerTier.CXN: (VocalClass.CXN,),
}

# the 12 renderable (tier, voc) pairs, in enumeration order
LABELS: tuple[tuple[SpeakerTier, VocalClass], ...] = tuple(
    (tier, voc) for tier, classes in TIER_CLASSES.items() for voc in classes
)

SD_ORDER: tuple[SpeakerTier, ...] = tuple(SpeakerTier)

# Per-frame probability record layout (16 values): SD over SD_ORDER, then the
# CHN, FAN and MAN class distributions. CXN has a single class.
PROB_SLICES: dict[str, slice] = {
    "SD": slice(0, 5),
    "CHN": slice(5, 8),
    "FAN": slice(8, 12),
    "MAN": slice(12, 16),
}
N_PROBS = 16


def label_name(tier: SpeakerTier, voc: VocalClass | None) -> str:
    return tier.value if voc is None else f"{tier.value}_{voc.value}"


def _snap(t: float) -> float:
    return round(t, 9) + 0.0


def _check_pair(tier: SpeakerTier, voc: VocalClass | None) -> None:
    if tier is SpeakerTier.SIL:
        if voc is not None:
            raise MalformedInputError("SIL never carries a vocalization class")
    elif voc not in TIER_CLASSES[tier]:
        raise MalformedInputError(f"{voc} is not a valid class for tier {tier.value}")


@dataclass(frozen=True)
class LabelSpan:
    onset: float
    offset: float
    tier: SpeakerTier
    voc: VocalClass | None = None

    def __post_init__(self):
        if not (math.isfinite(self.onset) and math.isfinite(self.offset)):
            raise MalformedInputError("span times must be finite")
        if self.onset < 0:
            raise MalformedInputError(f"span onset {self.onset} is negative")
        if self.offset <= self.onset:
            raise MalformedInputError(
                f"span offset {self.offset} is not after onset {self.onset}"
            )
        _check_pair(self.tier, self.voc)

    @property
    def label(self) -> tuple[SpeakerTier, VocalClass | None]:
        return (self.tier, self.voc)

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class FrameGrid:
    """Frame ``i`` covers ``[i * hop, i * hop + window_len)``."""

    window_len: float = 2.0
    hop: float = 0.2
    n_frames: int = 0

    def __post_init__(self):
        if not self.window_len > 0:
            raise MalformedInputError("window_len must be positive")
        if not self.hop > 0:
            raise MalformedInputError("hop must be positive")
        if self.hop > self.window_len:
            raise MalformedInputError("hop must not exceed window_len")
        if self.n_frames < 0:
            raise MalformedInputError("n_frames must be non-negative")

    @classmethod
    def for_duration(cls, duration: float, window_len: float = 2.0, hop: float = 0.2) -> "FrameGrid":
        """Grid of all complete windows inside ``[0, duration)``."""
        if duration < window_len:
            return cls(window_len, hop, 0)
        n = int(math.floor((duration - window_len) / hop + EPS)) + 1
        return cls(window_len, hop, n)

    def start(self, i: int) -> float:
        return _snap(i * self.hop)

    def end(self, i: int) -> float:
        return _snap(i * self.hop + self.window_len)

    @property
    def duration(self) -> float:
        return self.end(self.n_frames - 1) if self.n_frames else 0.0


@dataclass(frozen=True)
class FrameLabel:
    frame_index: int
    tier: SpeakerTier = SpeakerTier.SIL
    voc: VocalClass | None = None
    discarded: bool = False

    def __post_init__(self):
        _check_pair(self.tier, self.voc)
        if self.discarded and self.tier is not SpeakerTier.SIL:
            raise MalformedInputError("a discarded frame carries no label")

    @property
    def label(self) -> tuple[SpeakerTier, VocalClass | None]:
        return (self.tier, self.voc)


def validate_timeline(spans: Sequence[LabelSpan]) -> None:
    """Raise unless spans are sorted by onset and pairwise non-overlapping."""
    for a, b in zip(spans, spans[1:]):
        if b.onset < a.offset - EPS:
            raise MalformedInputError(
                f"spans overlap or are unsorted: [{a.onset}, {a.offset}) and [{b.onset}, {b.offset})"
            )


def _check_per_tier(spans: Sequence[LabelSpan]) -> None:
    by_tier: dict[SpeakerTier, list[LabelSpan]] = {}
    for s in spans:
        by_tier.setdefault(s.tier, []).append(s)
    for tier, tier_spans in by_tier.items():
        tier_spans.sort(key=lambda s: s.onset)
        for a, b in zip(tier_spans, tier_spans[1:]):
            if b.onset < a.offset - EPS:
                raise MalformedInputError(
                    f"overlapping {tier.value} spans: [{a.onset}, {a.offset}) and [{b.onset}, {b.offset})"
                )


class _SpanIndex:
    """Range queries over spans that may overlap across tiers."""

    def __init__(self, spans: Iterable[LabelSpan]):
        self.spans = sorted(spans, key=lambda s: (s.onset, s.offset))
        self.onsets = [s.onset for s in self.spans]
        self.max_len = max((s.duration for s in self.spans), default=0.0)

    def overlapping(self, start: float, end: float) -> list[LabelSpan]:
        lo = bisect.bisect_left(self.onsets, start - self.max_len - EPS)
        hi = bisect.bisect_left(self.onsets, end)
        return [s for s in self.spans[lo:hi] if s.offset > start]


def _coverage(index: _SpanIndex, start: float, end: float) -> dict[tuple, float]:
    cover: dict[tuple, float] = {}
    for s in index.overlapping(start, end):
        c = min(s.offset, end) - max(s.onset, start)
        if c > 0:
            cover[s.label] = cover.get(s.label, 0.0) + c
    return cover


def frame_coverage(spans: Sequence[LabelSpan], start: float, end: float) -> dict[tuple, float]:
    """Seconds of ``[start, end)`` covered by each (tier, voc) label.

    Time covered by no span is reported under ``(SIL, None)``.
    """
    cover = _coverage(_SpanIndex(spans), start, end)
    labelled = sum(v for k, v in cover.items() if k[0] is not SpeakerTier.SIL)
    unlabelled = (end - start) - labelled - cover.get((SpeakerTier.SIL, None), 0.0)
    cover[(SpeakerTier.SIL, None)] = cover.get((SpeakerTier.SIL, None), 0.0) + max(unlabelled, 0.0)
    return cover


def majority_label(
    spans: Sequence[LabelSpan],
    grid: FrameGrid,
    energy: Sequence[float] | np.ndarray | None = None,
    energy_threshold: float | None = None,
    keep_discarded: bool = False,
) -> list[FrameLabel]:
    """Label each grid frame by the (tier, voc) covering more than half of it.

    Frames touched by two or more speaker tiers are discarded and left out of
    the result, unless ``keep_discarded`` is set, in which case they appear
    with ``discarded=True``. Frames with energy below ``energy_threshold`` are
    silence.
    """
    _check_per_tier(spans)
    if energy is not None:
        energy = np.asarray(energy, dtype=np.float64)
        if energy.shape != (grid.n_frames,):
            raise MalformedInputError(
                f"energy has {energy.size} values for {grid.n_frames} frames"
            )
    index = _SpanIndex(spans)
    half = grid.window_len / 2.0
    out: list[FrameLabel] = []
    for i in range(grid.n_frames):
        start, end = grid.start(i), grid.end(i)
        cover = _coverage(index, start, end)
        speakers = {k[0] for k, v in cover.items() if k[0] is not SpeakerTier.SIL and v > EPS}
        if len(speakers) > 1:
            if keep_discarded:
                out.append(FrameLabel(i, discarded=True))
            continue
        if energy is not None and energy_threshold is not None and energy[i] < energy_threshold:
            out.append(FrameLabel(i))
            continue
        best, best_cover = (SpeakerTier.SIL, None), 0.0
        for lab in sorted(cover, key=_label_order):
            if cover[lab] > best_cover:
                best, best_cover = lab, cover[lab]
        if best_cover > half + EPS:
            out.append(FrameLabel(i, *best))
        else:
            out.append(FrameLabel(i))
    return out


def center_labels(spans: Sequence[LabelSpan], grid: FrameGrid) -> list[FrameLabel]:
    """Label each frame by the span containing its center instant.

    This is the exact inverse of :func:`resolve_conflicts`: a run of frames
    resolves to a span that holds exactly those frames' centers.
    """
    validate_timeline(spans)
    onsets = [s.onset for s in spans]
    out = []
    for i in range(grid.n_frames):
        c = _snap(i * grid.hop + grid.window_len / 2.0)
        j = bisect.bisect_right(onsets, c + EPS) - 1
        if j >= 0 and spans[j].offset > c + EPS:
            out.append(FrameLabel(i, *spans[j].label))
        else:
            out.append(FrameLabel(i))
    return out


def _label_order(lab: tuple) -> int:
    if lab[0] is SpeakerTier.SIL:
        return -1
    return LABELS.index(lab)


def _as_prob_matrix(frames) -> np.ndarray:
    probs = np.asarray(frames, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != N_PROBS:
        raise MalformedInputError(f"probability records must have {N_PROBS} values")
    return probs


def decode_machine_labels(
    frames,
    grid: FrameGrid,
    conf_threshold: float = 0.8,
    energy: Sequence[float] | np.ndarray | None = None,
    energy_threshold: float | None = None,
) -> list[FrameLabel]:
    """Turn per-frame tier/class probabilities into frame labels.

    A frame becomes silence when the top SD probability or the top class
    probability of the winning tier is below ``conf_threshold``, or when its
    energy is below ``energy_threshold``.
    """
    probs = _as_prob_matrix(frames)
    n = probs.shape[0]
    if grid.n_frames and n != grid.n_frames:
        raise MalformedInputError(f"{n} probability records for {grid.n_frames} frames")
    if not np.all(np.isfinite(probs)):
        raise MalformedInputError("probability records contain non-finite values")
    for name, sl in PROB_SLICES.items():
        sums = probs[:, sl].sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-6)
        if bad.size:
            raise MalformedInputError(
                f"{name} distribution of frame {bad[0]} sums to {sums[bad[0]]:.9g}, not 1"
            )
    gate = np.zeros(n, dtype=bool)
    if energy is not None and energy_threshold is not None:
        energy = np.asarray(energy, dtype=np.float64)
        if energy.shape != (n,):
            raise MalformedInputError(f"energy has {energy.size} values for {n} frames")
        gate = energy < energy_threshold

    sd = probs[:, PROB_SLICES["SD"]]
    sd_arg = np.argmax(sd, axis=1)
    sd_max = sd[np.arange(n), sd_arg]
    out = []
    for i in range(n):
        tier = SD_ORDER[sd_arg[i]]
        if gate[i] or sd_max[i] < conf_threshold or tier is SpeakerTier.SIL:
            out.append(FrameLabel(i))
            continue
        if tier is SpeakerTier.CXN:
            voc, p = VocalClass.CXN, 1.0
        else:
            dist = probs[i, PROB_SLICES[tier.value]]
            j = int(np.argmax(dist))
            voc, p = TIER_CLASSES[tier][j], dist[j]
        if p < conf_threshold:
            out.append(FrameLabel(i))
        else:
            out.append(FrameLabel(i, tier, voc))
    return out


def resolve_intervals(intervals: Iterable[tuple[float, float, tuple | None]]) -> list[LabelSpan]:
    """Merge onset-sorted labeled intervals into a non-overlapping timeline.

    Each item is ``(onset, offset, label)`` where label is ``(tier, voc)`` or
    ``None`` for silence. Consecutive intervals with equal labels merge; where
    two consecutive intervals carry different labels and overlap, the
    boundary goes to the middle of their overlap. Silence takes part in
    boundary placement but yields no span. Conflicts among three or more
    intervals are resolved pairwise, left to right.
    """
    spans: list[LabelSpan] = []
    run_label = None
    run_start = run_end = prev_onset = 0.0
    started = False

    def close(end: float):
        if run_label is not None and end > run_start + EPS:
            spans.append(LabelSpan(_snap(run_start), _snap(end), *run_label))

    for onset, offset, label in intervals:
        if label is not None and label[0] is SpeakerTier.SIL:
            label = None
        if not started:
            run_label, run_start, run_end, started = label, onset, offset, True
            prev_onset = onset
            continue
        if onset < prev_onset - EPS:
            raise MalformedInputError("intervals must be sorted by onset")
        prev_onset = onset
        if label == run_label and onset <= run_end + EPS:
            run_end = max(run_end, offset)
        elif onset < run_end:
            boundary = max(_snap((onset + run_end) / 2.0), run_start)
            close(boundary)
            run_label, run_start, run_end = label, boundary, offset
        else:
            close(run_end)
            run_label, run_start, run_end = label, onset, offset
    if started:
        close(run_end)
    return spans


def resolve_conflicts(labels: Sequence[FrameLabel], grid: FrameGrid) -> list[LabelSpan]:
    """Conflict-resolve overlapping frame labels on ``grid`` into spans."""
    ordered = sorted(labels, key=lambda f: f.frame_index)
    return resolve_intervals(
        (grid.start(f.frame_index), grid.end(f.frame_index),
         None if f.tier is SpeakerTier.SIL else f.label)
        for f in ordered
    )


def window_composition(
    spans: Sequence[LabelSpan], t0: float, length: float = 30.0
) -> tuple[dict[tuple[SpeakerTier, VocalClass], float], float]:
    """Fraction of ``[t0, t0 + length)`` taken by each of the 12 labels.

    Returns the per-label fractions (all 12 keys, enumeration order) and
    their sum, the total vocalization fraction.
    """
    t1 = t0 + length
    fractions = {lab: 0.0 for lab in LABELS}
    onsets = [s.onset for s in spans]
    hi = bisect.bisect_left(onsets, t1)
    for s in spans[:hi]:
        if s.offset <= t0 or s.tier is SpeakerTier.SIL:
            continue
        fractions[s.label] += (min(s.offset, t1) - max(s.onset, t0)) / length
    total = sum(fractions.values())
    return fractions, min(total, 1.0)


# -- CSV ------------------------------------------------------------------

SPAN_HEADER = ["onset_s", "offset_s", "tier", "voc"]


def parse_spans_csv(text: str, source: str = "<labels>") -> list[LabelSpan]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != SPAN_HEADER:
        raise MalformedInputError(f"{source}: expected header {','.join(SPAN_HEADER)}")
    spans = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise MalformedInputError(f"{source}:{lineno}: expected 4 fields")
        try:
            tier = SpeakerTier(row[2].strip())
            voc = VocalClass(row[3].strip()) if row[3].strip() else None
            spans.append(LabelSpan(float(row[0]), float(row[1]), tier, voc))
        except (ValueError, MalformedInputError) as exc:
            raise MalformedInputError(f"{source}:{lineno}: {exc}") from None
    return spans


def read_spans_csv(path) -> list[LabelSpan]:
    with open(path, newline="") as fh:
        return parse_spans_csv(fh.read(), str(path))


def format_spans_csv(spans: Iterable[LabelSpan]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SPAN_HEADER)
    for s in spans:
        w.writerow([repr(s.onset), repr(s.offset), s.tier.value, s.voc.value if s.voc else ""])
    return buf.getvalue()


def write_spans_csv(spans: Iterable[LabelSpan], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_spans_csv(spans))


def format_frame_labels_csv(labels: Iterable[FrameLabel], grid: FrameGrid) -> str:
    """One row per frame; discarded frames are written with tier DISCARDED."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_index", "onset_s", "offset_s", "tier", "voc"])
    for f in labels:
        tier = "DISCARDED" if f.discarded else f.tier.value
        w.writerow([f.frame_index, repr(grid.start(f.frame_index)), repr(grid.end(f.frame_index)),
                    tier, f.voc.value if f.voc else ""])
    return buf.getvalue()
