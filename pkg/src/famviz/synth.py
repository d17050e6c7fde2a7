"""Synthetic families with known frame regimes and label scripts.

A family is a sequence of regime blocks. Inside a block, frame embeddings
are drawn i.i.d. from the regime's isotropic Gaussian mixture and labels
follow the regime's cyclic label script.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MalformedInputError
from .frames import FrameSequence
from .timeline import (
    LABELS,
    N_PROBS,
    PROB_SLICES,
    SD_ORDER,
    TIER_CLASSES,
    FrameGrid,
    LabelSpan,
    SpeakerTier,
    VocalClass,
    _snap,
    _SpanIndex,
    majority_label,
)

QUANTUM = 0.2  # label boundaries land on this grid


@dataclass(frozen=True)
class MixtureComponent:
    mean: tuple
    std: float
    weight: float


@dataclass(frozen=True)
class ScriptStep:
    tier: SpeakerTier
    voc: VocalClass | None
    duration: float


@dataclass(frozen=True)
class LabelScript:
    steps: tuple = ()
    jitter: float = 0.0

    def spans(self, t0: float, t1: float, rng: np.random.Generator) -> list[LabelSpan]:
        out: list[LabelSpan] = []
        if not self.steps:
            return out
        t, i = t0, 0
        while t < t1 - 1e-9:
            step = self.steps[i % len(self.steps)]
            i += 1
            d = step.duration
            if self.jitter > 0:
                d *= rng.uniform(1 - self.jitter, 1 + self.jitter)
            d = max(QUANTUM, round(d / QUANTUM) * QUANTUM)
            end = _snap(min(t + d, t1))
            if step.tier is not SpeakerTier.SIL and end > t:
                out.append(LabelSpan(_snap(t), end, step.tier, step.voc))
            t = end
        return out


@dataclass(frozen=True)
class RegimeSpec:
    name: str
    mixture: tuple
    script: LabelScript = field(default_factory=LabelScript)
    duration: float = 60.0

    def __post_init__(self):
        if not self.mixture:
            raise MalformedInputError(f"regime {self.name!r} has an empty mixture")
        w = sum(c.weight for c in self.mixture)
        if abs(w - 1.0) > 1e-9:
            raise MalformedInputError(f"regime {self.name!r}: mixture weights sum to {w}")
        if any(c.std < 0 for c in self.mixture):
            raise MalformedInputError(f"regime {self.name!r}: negative std")
        if len({len(c.mean) for c in self.mixture}) != 1:
            raise MalformedInputError(f"regime {self.name!r}: component means differ in dimension")

    @property
    def dim(self) -> int:
        return len(self.mixture[0].mean)


def regime_schedule(specs: Sequence[RegimeSpec]) -> list[tuple[float, float, str]]:
    out, t = [], 0.0
    for s in specs:
        out.append((_snap(t), _snap(t + s.duration), s.name))
        t += s.duration
    return out


def regime_at(schedule: Sequence[tuple[float, float, str]], t: float) -> str:
    for start, end, name in schedule:
        if start <= t < end:
            return name
    raise MalformedInputError(f"time {t} is outside the schedule")


def _frame_energy(spans: Sequence[LabelSpan], grid: FrameGrid) -> np.ndarray:
    index = _SpanIndex(spans)
    out = np.empty(grid.n_frames, dtype=np.float32)
    for i in range(grid.n_frames):
        a, b = grid.start(i), grid.end(i)
        voiced = sum(min(s.offset, b) - max(s.onset, a) for s in index.overlapping(a, b))
        out[i] = 0.005 + 0.1 * voiced / grid.window_len
    return out


def generate_family(spec: RegimeSpec | Sequence[RegimeSpec], seed: int, family_id: str = "family",
                    grid: FrameGrid | None = None) -> tuple[FrameSequence, list[LabelSpan]]:
    """Frames and ground-truth timeline for one family.

    ``spec`` is one regime or a sequence of regime blocks played in order.
    Each frame takes the regime active at its start time.
    """
    specs = [spec] if isinstance(spec, RegimeSpec) else list(spec)
    if not specs:
        raise MalformedInputError("no regimes given")
    if len({s.dim for s in specs}) != 1:
        raise MalformedInputError("regimes differ in embedding dimension")
    total = sum(s.duration for s in specs)
    if total < 60.0:
        raise MalformedInputError(f"family lasts {total}s; at least 60s is required")
    base = grid or FrameGrid()
    grid = FrameGrid.for_duration(total, base.window_len, base.hop)
    rng = np.random.default_rng(seed)
    sched = regime_schedule(specs)
    starts = np.array([grid.start(i) for i in range(grid.n_frames)])
    bounds = np.array([end for _, end, _ in sched[:-1]])
    which = np.searchsorted(bounds, starts, side="right")
    dim = specs[0].dim
    vectors = np.empty((grid.n_frames, dim), dtype=np.float32)
    spans: list[LabelSpan] = []
    for r, s in enumerate(specs):
        idx = np.flatnonzero(which == r)
        means = np.array([c.mean for c in s.mixture], dtype=np.float64)
        stds = np.array([c.std for c in s.mixture], dtype=np.float64)
        comp = rng.choice(len(s.mixture), size=idx.size, p=[c.weight for c in s.mixture])
        noise = rng.standard_normal((idx.size, dim))
        vectors[idx] = (means[comp] + stds[comp, None] * noise).astype(np.float32)
        spans.extend(s.script.spans(sched[r][0], sched[r][1], rng))
    energy = _frame_energy(spans, grid)
    frames = FrameSequence(grid, vectors, energy=energy, family_id=family_id)
    return frames, spans


_ALL_LABELS = ((SpeakerTier.SIL, None),) + LABELS


def generate_probability_stream(timeline: Sequence[LabelSpan], grid: FrameGrid, confusion_rate: float,
                                seed: int, peak: float | None = None) -> np.ndarray:
    """Per-frame tier/class probability records (n_frames x 16).

    The frame's majority label (silence for multi-speaker frames) receives
    ``peak`` probability mass, default ``1 - confusion_rate``, with the rest
    spread uniformly. With probability ``confusion_rate`` that peak moves to a
    random wrong label.
    """
    if not 0.0 <= confusion_rate < 1.0:
        raise MalformedInputError("confusion_rate must lie in [0, 1)")
    peak = 1.0 - confusion_rate if peak is None else peak
    if not 0.0 < peak <= 1.0:
        raise MalformedInputError("peak must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    truth = majority_label(timeline, grid, keep_discarded=True)
    out = np.zeros((grid.n_frames, N_PROBS))
    for f in truth:
        lab = (SpeakerTier.SIL, None) if f.discarded else f.label
        if confusion_rate > 0 and rng.random() < confusion_rate:
            others = [x for x in _ALL_LABELS if x != lab]
            lab = others[rng.integers(len(others))]
        row = out[f.frame_index]
        tier, voc = lab
        sd = np.full(len(SD_ORDER), (1.0 - peak) / (len(SD_ORDER) - 1))
        sd[SD_ORDER.index(tier)] = peak
        row[PROB_SLICES["SD"]] = sd
        for name in ("CHN", "FAN", "MAN"):
            classes = TIER_CLASSES[SpeakerTier(name)]
            m = len(classes)
            if tier.value == name:
                dist = np.full(m, (1.0 - peak) / (m - 1))
                dist[classes.index(voc)] = peak
            else:
                dist = np.full(m, 1.0 / m)
            row[PROB_SLICES[name]] = dist
    return out


# -- JSON configs ---------------------------------------------------------

def _mean_from_config(value, dim: int) -> tuple:
    if isinstance(value, Mapping):
        v = np.zeros(dim)
        v[int(value["axis"])] = float(value["value"])
        return tuple(v)
    if isinstance(value, (int, float)):
        return tuple(np.full(dim, float(value)))
    if len(value) != dim:
        raise MalformedInputError(f"mean has {len(value)} entries, dim is {dim}")
    return tuple(float(x) for x in value)


def regime_from_config(name: str, cfg: Mapping, dim: int, duration: float) -> RegimeSpec:
    try:
        mixture = tuple(MixtureComponent(_mean_from_config(c["mean"], dim), float(c["std"]),
                                         float(c.get("weight", 1.0))) for c in cfg["mixture"])
        steps = []
        for st in cfg.get("script", {}).get("steps", []):
            tier = SpeakerTier(st["tier"])
            voc = VocalClass(st["voc"]) if st.get("voc") else None
            steps.append(ScriptStep(tier, voc, float(st["duration"])))
        script = LabelScript(tuple(steps), float(cfg.get("script", {}).get("jitter", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInputError(f"regime {name!r}: {exc}") from None
    return RegimeSpec(name, mixture, script, duration)


def schedule_from_config(fam: Mapping, regime_names: Sequence[str], rng: np.random.Generator):
    """``[(regime, seconds), ...]`` from an explicit list or random blocks."""
    if "schedule" in fam:
        return [(str(n), float(d)) for n, d in fam["schedule"]]
    blocks = fam.get("random_blocks")
    if not blocks:
        raise MalformedInputError(f"family {fam.get('family_id')!r} needs 'schedule' or 'random_blocks'")
    total, block = float(blocks["total_s"]), float(blocks["block_s"])
    n = int(math.ceil(total / block))
    order = []
    while len(order) < n:
        order.extend(rng.permutation(len(regime_names)).tolist())
    out = []
    for i in range(n):
        out.append((regime_names[order[i]], min(block, total - i * block)))
    return out


def family_specs(cfg: Mapping, fam: Mapping) -> list[RegimeSpec]:
    dim = int(cfg["dim"])
    regimes = cfg["regimes"]
    rng = np.random.default_rng(int(fam.get("seed", 0)) + 7919)
    specs = []
    for name, dur in schedule_from_config(fam, list(regimes), rng):
        if name not in regimes:
            raise MalformedInputError(f"unknown regime {name!r}")
        specs.append(regime_from_config(name, regimes[name], dim, dur))
    return specs


def three_regime_config(n_families: int = 3, duration: float = 3600.0, dim: int = 16,
                        separation: float = 10.0, block: float = 120.0, seed: int = 0) -> dict:
    """Corpus with three well-separated regimes: talk, cry and adult chat.

    Regime means sit ``separation`` std apart along distinct axes; each
    regime is a two-component mixture.
    """
    def mix(axis: int) -> list:
        return [
            {"mean": {"axis": axis, "value": separation}, "std": 1.0, "weight": 0.6},
            {"mean": _offset(axis, separation, dim), "std": 1.0, "weight": 0.4},
        ]

    return {
        "dim": dim,
        "regimes": {
            "engaged": {"mixture": mix(0), "script": {"jitter": 0.3, "steps": [
                {"tier": "FAN", "voc": "CDS", "duration": 3.0},
                {"tier": "SIL", "duration": 1.0},
                {"tier": "CHN", "voc": "BAB", "duration": 2.4},
                {"tier": "SIL", "duration": 1.4}]}},
            "distress": {"mixture": mix(1), "script": {"jitter": 0.3, "steps": [
                {"tier": "CHN", "voc": "CRY", "duration": 6.0},
                {"tier": "SIL", "duration": 1.0},
                {"tier": "CHN", "voc": "FUS", "duration": 3.0},
                {"tier": "FAN", "voc": "SNG", "duration": 4.0},
                {"tier": "SIL", "duration": 1.2}]}},
            "adults": {"mixture": mix(2), "script": {"jitter": 0.3, "steps": [
                {"tier": "FAN", "voc": "ADS", "duration": 4.0},
                {"tier": "MAN", "voc": "ADS", "duration": 3.6},
                {"tier": "SIL", "duration": 2.0},
                {"tier": "CXN", "voc": "CXN", "duration": 1.6},
                {"tier": "SIL", "duration": 3.0}]}},
        },
        "families": [
            {"family_id": f"family{i + 1}", "seed": seed + i,
             "random_blocks": {"total_s": duration, "block_s": block}}
            for i in range(n_families)
        ],
    }


def _offset(axis: int, separation: float, dim: int) -> list:
    v = [0.0] * dim
    v[axis] = separation
    v[(axis + 3) % dim] = 3.0
    return v
