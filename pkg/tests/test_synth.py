import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from famviz import synth
from famviz.errors import MalformedInputError
from famviz.frames import decode_frames, encode_frames
from famviz.metrics import cohen_kappa, confusion
from famviz.synth import LabelScript, MixtureComponent, RegimeSpec, ScriptStep
from famviz.timeline import (
    LABELS,
    FrameGrid,
    SpeakerTier as T,
    VocalClass as V,
    center_labels,
    decode_machine_labels,
    majority_label,
    resolve_conflicts,
    validate_timeline,
)

SCRIPT = LabelScript((ScriptStep(T.FAN, V.CDS, 3.0), ScriptStep(T.SIL, None, 1.0),
                      ScriptStep(T.CHN, V.BAB, 2.0)), jitter=0.3)


def regime(mean=0.0, std=1.0, dim=3, duration=60.0, name="r"):
    return RegimeSpec(name, (MixtureComponent(tuple([mean] * dim), std, 1.0),), SCRIPT, duration)


def test_regime_validation():
    with pytest.raises(MalformedInputError):
        RegimeSpec("r", (MixtureComponent((0.0,), 1.0, 0.7),))
    with pytest.raises(MalformedInputError):
        RegimeSpec("r", ())
    with pytest.raises(MalformedInputError):
        RegimeSpec("r", (MixtureComponent((0.0,), -1.0, 1.0),))


def test_family_shape_and_determinism():
    frames, spans = synth.generate_family(regime(), seed=3, family_id="x")
    assert frames.grid.n_frames == 291 and frames.dim == 3
    again, spans2 = synth.generate_family(regime(), seed=3, family_id="x")
    assert frames.vectors.tobytes() == again.vectors.tobytes() and spans == spans2
    other, _ = synth.generate_family(regime(), seed=4)
    assert other.vectors.tobytes() != frames.vectors.tobytes()


def test_zero_variance_frames_identical():
    frames, _ = synth.generate_family(regime(mean=2.0, std=0.0), seed=0)
    assert np.all(frames.vectors == 2.0)


def test_short_family_rejected():
    with pytest.raises(MalformedInputError):
        synth.generate_family(regime(duration=59.0), seed=0)


def test_regime_blocks_follow_schedule():
    specs = [regime(0.0, 0.1, name="a", duration=40.0), regime(50.0, 0.1, name="b", duration=40.0)]
    frames, _ = synth.generate_family(specs, seed=0)
    sched = synth.regime_schedule(specs)
    for i in range(frames.n_frames):
        expect = 0.0 if synth.regime_at(sched, frames.grid.start(i)) == "a" else 50.0
        assert abs(frames.vectors[i, 0] - expect) < 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_generated_timelines_valid_and_round_trip(seed):
    frames, spans = synth.generate_family(regime(), seed=seed)
    validate_timeline(spans)
    for s in spans:
        assert s.offset > s.onset
    frames.probs = synth.generate_probability_stream(spans, frames.grid, 0.1, seed)
    back = decode_frames(encode_frames(frames))
    assert encode_frames(back) == encode_frames(frames)
    assert back.vectors.tobytes() == frames.vectors.tobytes()


def test_probability_records_valid():
    frames, spans = synth.generate_family(regime(), seed=1)
    probs = synth.generate_probability_stream(spans, frames.grid, 0.3, seed=2)
    assert probs.shape == (frames.n_frames, 16)
    decode_machine_labels(probs, frames.grid, conf_threshold=0.0)
    with pytest.raises(MalformedInputError):
        synth.generate_probability_stream(spans, frames.grid, 1.0, seed=0)


def test_zero_confusion_recovers_truth():
    frames, spans = synth.generate_family(regime(duration=300), seed=5)
    truth = majority_label(spans, frames.grid)
    probs = synth.generate_probability_stream(spans, frames.grid, 0.0, seed=0)
    resolved = resolve_conflicts(decode_machine_labels(probs, frames.grid), frames.grid)
    hyp = center_labels(resolved, frames.grid)
    assert all(hyp[f.frame_index].label == f.label for f in truth)


def test_low_peak_decodes_silent():
    frames, spans = synth.generate_family(regime(), seed=5)
    probs = synth.generate_probability_stream(spans, frames.grid, 0.0, seed=0, peak=0.79)
    out = decode_machine_labels(probs, frames.grid)
    assert all(f.tier is T.SIL for f in out)


def _decode_kappa(spans, grid, rate, seed):
    probs = synth.generate_probability_stream(spans, grid, rate, seed)
    labels = decode_machine_labels(probs, grid, conf_threshold=0.0 if rate else 0.8)
    truth = majority_label(spans, grid)
    names = [None] + list(LABELS)

    def name(f):
        return None if f.tier is T.SIL else f.label

    ref = [name(f) for f in truth]
    hyp = [name(labels[f.frame_index]) for f in truth]
    return cohen_kappa(confusion(ref, hyp, names))


def test_confusion_lowers_kappa():
    frames, spans = synth.generate_family(regime(duration=300), seed=8)
    clean = _decode_kappa(spans, frames.grid, 0.0, 0)
    noisy = [_decode_kappa(spans, frames.grid, 0.5, s) for s in range(5)]
    assert clean == 1.0
    assert max(noisy) < clean


# -- configs ----------------------------------------------------------------

def test_three_regime_config_specs():
    cfg = synth.three_regime_config(n_families=2, duration=600, dim=8)
    specs = synth.family_specs(cfg, cfg["families"][0])
    assert sum(s.duration for s in specs) == 600
    assert {s.name for s in specs} == {"engaged", "distress", "adults"}
    assert all(s.dim == 8 for s in specs)


def test_explicit_schedule_and_errors():
    cfg = {"dim": 2, "regimes": {"a": {"mixture": [{"mean": 1.0, "std": 0.5}]}}}
    specs = synth.family_specs(cfg, {"family_id": "f", "schedule": [["a", 90]]})
    assert specs[0].mixture[0].mean == (1.0, 1.0)
    with pytest.raises(MalformedInputError):
        synth.family_specs(cfg, {"family_id": "f", "schedule": [["zzz", 90]]})
    with pytest.raises(MalformedInputError):
        synth.family_specs(cfg, {"family_id": "f"})
    with pytest.raises(MalformedInputError):
        synth.regime_from_config("b", {"mixture": [{"mean": [1.0], "std": 1}]}, 2, 60)


def test_grid_override():
    frames, _ = synth.generate_family(regime(), seed=0, grid=FrameGrid(1.0, 0.5))
    assert frames.grid.hop == 0.5 and frames.grid.n_frames == 119
