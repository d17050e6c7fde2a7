"""Accuracy, macro-F1 and Cohen's kappa over frame-level label pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import InsufficientDataError, MalformedInputError
from .timeline import SD_ORDER, TIER_CLASSES, LabelSpan, SpeakerTier, _SpanIndex


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray  # rows = reference, cols = hypothesis

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(ref: Sequence[Hashable], hyp: Sequence[Hashable], labels: Sequence[Hashable]) -> ConfusionMatrix:
    if len(ref) != len(hyp):
        raise MalformedInputError(f"reference has {len(ref)} labels, hypothesis {len(hyp)}")
    if len(ref) == 0:
        raise MalformedInputError("label sequences are empty")
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for r, h in zip(ref, hyp):
        if r not in pos or h not in pos:
            raise MalformedInputError(f"label {r if r not in pos else h!r} is not in {list(labels)}")
        counts[pos[r], pos[h]] += 1
    return ConfusionMatrix(tuple(labels), counts)


def _counts(cm: ConfusionMatrix) -> np.ndarray:
    c = np.asarray(cm.counts, dtype=np.float64)
    if c.size == 0 or c.sum() <= 0:
        raise InsufficientDataError("confusion matrix is empty")
    return c


def accuracy(cm: ConfusionMatrix) -> float:
    c = _counts(cm)
    return float(np.trace(c) / c.sum())


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    c = _counts(cm)
    tp = np.diag(c)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean F1 over the classes that occur in the reference."""
    c = _counts(cm)
    present = c.sum(axis=1) > 0
    return float(per_class_f1(cm)[present].mean())


def cohen_kappa(cm: ConfusionMatrix) -> float:
    c = _counts(cm)
    total = c.sum()
    p_o = np.trace(c) / total
    p_e = float(np.dot(c.sum(axis=1), c.sum(axis=0)) / total ** 2)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def summarize(cm: ConfusionMatrix) -> dict:
    return {
        "labels": [str(x) for x in cm.labels],
        "confusion": cm.counts.tolist(),
        "n": cm.total,
        "accuracy": accuracy(cm),
        "macro_f1": macro_f1(cm),
        "kappa": cohen_kappa(cm),
    }


# -- timeline evaluation ----------------------------------------------------

def step_labels(spans: Sequence[LabelSpan], n_steps: int, hop: float = 0.2) -> list[tuple]:
    """Label at the centre of each ``hop``-long step; silence is ``(SIL, None)``."""
    index = _SpanIndex(spans)
    out = []
    for t in range(n_steps):
        c = (t + 0.5) * hop
        hit = [s for s in index.overlapping(c, c + 1e-12) if s.onset <= c < s.offset
               and s.tier is not SpeakerTier.SIL]
        out.append(min(hit, key=lambda s: SD_ORDER.index(s.tier)).label if hit else (SpeakerTier.SIL, None))
    return out


def timeline_report(ref: Sequence[LabelSpan], hyp: Sequence[LabelSpan], hop: float = 0.2,
                    duration: float | None = None) -> dict:
    """Per-tier metrics in the layout of an SD/CHN/FAN/MAN results table.

    The SD tier is scored over all steps with SIL as a class, and again over
    steps where both streams are non-silent (``SD_noSIL``). A vocalization
    tier is scored on steps where both streams assign that speaker.
    """
    if duration is None:
        duration = max([s.offset for s in list(ref) + list(hyp)], default=0.0)
    n_steps = int(np.floor(duration / hop + 1e-9))
    if n_steps == 0:
        raise InsufficientDataError("timelines are empty")
    r = step_labels(ref, n_steps, hop)
    h = step_labels(hyp, n_steps, hop)
    report = {"hop_s": hop, "n_steps": n_steps, "tiers": {}}
    tiers = report["tiers"]

    def score(name, pairs, labels):
        if not pairs:
            tiers[name] = None
            return
        cm = confusion([a for a, _ in pairs], [b for _, b in pairs], labels)
        tiers[name] = summarize(cm)

    sd_labels = [t.value for t in SD_ORDER]
    score("SD", [(a[0].value, b[0].value) for a, b in zip(r, h)], sd_labels)
    score("SD_noSIL", [(a[0].value, b[0].value) for a, b in zip(r, h)
                       if a[0] is not SpeakerTier.SIL and b[0] is not SpeakerTier.SIL], sd_labels[1:])
    for tier in (SpeakerTier.CHN, SpeakerTier.FAN, SpeakerTier.MAN):
        score(tier.value, [(a[1].value, b[1].value) for a, b in zip(r, h)
                           if a[0] is tier and b[0] is tier],
              [v.value for v in TIER_CLASSES[tier]])
    return report
