"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import audioenergy, boaw, dimred, metrics, synth, viz
from .config import ConfigError, PipelineConfig, load_config
from .errors import FamvizError
from .frames import read_frames, write_frames
from .pipeline import reduce, render_spec, run_pipeline, safe_name
from .timeline import (
    FrameGrid,
    SpeakerTier,
    decode_machine_labels,
    format_frame_labels_csv,
    majority_label,
    read_spans_csv,
    resolve_conflicts,
    write_spans_csv,
)

log = logging.getLogger("famviz")


class UsageError(FamvizError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging() -> None:
    level = os.environ.get("FAMVIZ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _effective(args, cfg: PipelineConfig) -> PipelineConfig:
    if args.seed is not None:
        cfg.set_seed(args.seed)
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _announce(command: str, cfg: PipelineConfig, extra: dict | None = None) -> None:
    shown = {"command": command, **(extra or {}), "config": cfg.to_dict()}
    print("effective config: " + json.dumps(shown, sort_keys=True), file=sys.stderr)


def _need_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command}: --out is required")
    return Path(args.out)


def _grid(cfg: PipelineConfig, n_frames: int = 0) -> FrameGrid:
    return FrameGrid(cfg.grid.window_len, cfg.grid.hop, n_frames)


# -- subcommands ----------------------------------------------------------

def cmd_energy(args, cfg):
    clip = audioenergy.read_wav_file(args.wav)
    track = audioenergy.frame_energy(clip, _grid(cfg))
    result = {"n_frames": track.grid.n_frames, "sample_rate": clip.sample_rate}
    if args.labels:
        labels = majority_label(read_spans_csv(args.labels), track.grid)
        chn = [f.frame_index for f in labels if f.tier is SpeakerTier.CHN]
        result["energy_threshold"] = audioenergy.derive_energy_threshold(track, chn)
    out = _need_out(args)
    if args.frames:
        seq = read_frames(args.frames)
        if seq.n_frames != track.grid.n_frames:
            raise FamvizError(f"{args.frames} has {seq.n_frames} frames, audio yields {track.grid.n_frames}")
        seq.energy = track.values.astype(np.float32)
        write_frames(seq, out)
    else:
        rows = ["frame_index,onset_s,energy"]
        rows += [f"{i},{track.grid.start(i)!r},{float(v)!r}" for i, v in enumerate(track.values)]
        out.write_text("\n".join(rows) + "\n")
    print(json.dumps(result, sort_keys=True))


def cmd_labels(args, cfg):
    spans = read_spans_csv(args.spans)
    energy = None
    if args.frames:
        seq = read_frames(args.frames)
        grid, energy = seq.grid, seq.energy
    elif args.duration is not None:
        grid = FrameGrid.for_duration(args.duration, cfg.grid.window_len, cfg.grid.hop)
    else:
        end = max((s.offset for s in spans), default=0.0)
        grid = FrameGrid.for_duration(end, cfg.grid.window_len, cfg.grid.hop)
    thr = args.energy_threshold
    labels = majority_label(spans, grid, energy, thr if energy is not None else None, keep_discarded=True)
    _need_out(args).write_text(format_frame_labels_csv(labels, grid))
    counts = {"frames": grid.n_frames, "discarded": sum(f.discarded for f in labels)}
    print(json.dumps(counts, sort_keys=True))


def cmd_decode(args, cfg):
    seq = read_frames(args.frames)
    if seq.probs is None or not seq.has_probs().all():
        raise FamvizError(f"{args.frames}: every frame needs probability records to decode")
    thr = args.energy_threshold
    if thr is None and isinstance(cfg.thresholds.energy, (int, float)):
        thr = float(cfg.thresholds.energy)
    conf = cfg.thresholds.confidence if args.confidence is None else args.confidence
    labels = decode_machine_labels(seq.probs, seq.grid, conf, seq.energy, thr if seq.energy is not None else None)
    spans = resolve_conflicts(labels, seq.grid)
    write_spans_csv(spans, _need_out(args))
    if args.frame_labels:
        Path(args.frame_labels).write_text(format_frame_labels_csv(labels, seq.grid))
    print(json.dumps({"frames": seq.n_frames, "spans": len(spans)}, sort_keys=True))


def cmd_codebook(args, cfg):
    seqs = [read_frames(p) for p in args.frames]
    if len({s.dim for s in seqs}) != 1:
        raise FamvizError("frame files disagree on embedding dimension")
    X = np.concatenate([s.vectors for s in seqs]).astype(np.float64)
    c = cfg.codebook
    book = boaw.kmeans_fit(X, c.k, seed=c.seed, max_iters=c.max_iters, tol=c.tol)
    boaw.write_codebook(book, _need_out(args))
    print(json.dumps({"k": book.k, "inertia": book.inertia, "n_iters_run": book.n_iters_run}, sort_keys=True))


def cmd_histograms(args, cfg):
    if args.labels and len(args.labels) != len(args.frames):
        raise UsageError("histograms: give one --labels file per frame file, in the same order")
    book = boaw.read_codebook(args.codebook)
    hists = []
    for i, path in enumerate(args.frames):
        seq = read_frames(path)
        timeline = read_spans_csv(args.labels[i]) if args.labels else None
        hists.extend(boaw.window_histograms(seq, book, cfg.window_len, timeline, cfg.codebook.n_assign))
    boaw.write_histograms_csv(hists, _need_out(args))
    print(json.dumps({"windows": len(hists)}, sort_keys=True))


def cmd_reduce(args, cfg):
    hists = boaw.read_histograms_csv(args.histograms)
    if args.method:
        cfg.reducer.method = args.method
    proj = reduce(boaw.histogram_matrix(hists), cfg)
    dimred.write_projection([(h.family_id, h.window_start) for h in hists], proj, _need_out(args))
    print(json.dumps({"points": len(hists), "method": proj.method}, sort_keys=True))


def cmd_sample(args, cfg):
    hists = boaw.read_histograms_csv(args.histograms)
    s = cfg.subsample
    by_family: dict[str, list] = {}
    for h in hists:
        by_family.setdefault(h.family_id, []).append(h)
    out = []
    for fam in by_family:
        out.extend(viz.cluster_subsample(by_family[fam], s.n_clusters, s.per_cluster, s.seed))
    boaw.write_histograms_csv(out, _need_out(args))
    print(json.dumps({"kept": len(out), "of": len(hists)}, sort_keys=True))


def cmd_render(args, cfg):
    keys, proj = dimred.read_projection(args.projection)
    hists = {(h.family_id, h.window_start): h for h in boaw.read_histograms_csv(args.histograms)}
    rows = [(k, xy) for k, xy in zip(keys, proj.coords) if args.family is None or k[0] == args.family]
    if not rows:
        raise FamvizError("no projected points to render")
    missing = [k for k, _ in rows if k not in hists]
    if missing:
        raise FamvizError(f"{args.histograms}: no histogram for window {missing[0]}")
    points = viz.pie_points(np.array([xy for _, xy in rows]), [hists[k] for k, _ in rows])
    _need_out(args).write_bytes(viz.render_svg(points, render_spec(cfg, args.family or "")))
    if args.points_csv:
        Path(args.points_csv).write_text(viz.format_pie_points_csv(points, [k for k, _ in rows]))
    print(json.dumps({"points": len(points)}, sort_keys=True))


def cmd_metrics(args, cfg):
    ref = read_spans_csv(args.ref)
    hyp = read_spans_csv(args.hyp)
    report = metrics.timeline_report(ref, hyp, cfg.grid.hop, args.duration)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_synth(args, cfg):
    if args.synth_config:
        try:
            scfg = json.loads(Path(args.synth_config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.synth_config}: invalid JSON ({exc})") from None
    else:
        scfg = synth.three_regime_config(seed=args.seed or 0)
    out = _need_out(args)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(cfg)
    families = []
    try:
        fam_cfgs = scfg["families"]
    except (KeyError, TypeError):
        raise ConfigError(f"{args.synth_config or '<builtin>'}: field families is required") from None
    for fam in fam_cfgs:
        fid = str(fam["family_id"])
        specs = synth.family_specs(scfg, fam)
        frames, spans = synth.generate_family(specs, int(fam.get("seed", 0)), fid, grid)
        if args.confusion_rate is not None:
            frames.probs = synth.generate_probability_stream(
                spans, frames.grid, args.confusion_rate, int(fam.get("seed", 0)) + 1).astype(np.float32)
        name = safe_name(fid)
        write_frames(frames, out / f"{name}.fvfr")
        write_spans_csv(spans, out / f"{name}.csv")
        rows = ["start_s,end_s,regime"] + [f"{a!r},{b!r},{n}" for a, b, n in synth.regime_schedule(specs)]
        (out / f"{name}.regimes.csv").write_text("\n".join(rows) + "\n")
        entry = {"family_id": fid, "frames": f"{name}.fvfr"}
        if not args.unlabeled:
            entry["labels"] = f"{name}.csv"
        families.append(entry)
    corpus = cfg.to_dict()
    corpus["families"] = families
    corpus["out"] = str((out / "out").resolve())
    (out / "pipeline.json").write_text(json.dumps(corpus, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"families": [f["family_id"] for f in families], "config": str(out / "pipeline.json")},
                     sort_keys=True))


def cmd_pipeline(args, cfg):
    if not cfg.families:
        raise ConfigError("pipeline: the config must list families")
    summary = run_pipeline(cfg)
    print(json.dumps(summary, sort_keys=True))


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override every seed")
    common.add_argument("--threads", type=int, help="families processed concurrently")
    common.add_argument("--out", help="output file or directory")

    p = _Parser(prog="famviz", description="Bag-of-audio-words family interaction visualizations")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("energy", parents=[common], help="per-frame RMS energy of a WAV file")
    s.add_argument("wav")
    s.add_argument("--labels", help="label CSV; derives the CHN energy threshold")
    s.add_argument("--frames", help="attach energy to this frame file (written to --out)")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("labels", parents=[common], help="majority frame labels from a span CSV")
    s.add_argument("spans")
    s.add_argument("--frames", help="frame file giving the grid and energy")
    s.add_argument("--duration", type=float, help="recording length in seconds")
    s.add_argument("--energy-threshold", type=float)
    s.set_defaults(func=cmd_labels)

    s = sub.add_parser("decode", parents=[common], help="machine labels from frame probabilities")
    s.add_argument("frames")
    s.add_argument("--confidence", type=float)
    s.add_argument("--energy-threshold", type=float)
    s.add_argument("--frame-labels", help="also write per-frame labels here")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("codebook", parents=[common], help="learn the audio-word codebook")
    s.add_argument("frames", nargs="+")
    s.set_defaults(func=cmd_codebook)

    s = sub.add_parser("histograms", parents=[common], help="30 s bag-of-audio-words histograms")
    s.add_argument("frames", nargs="+")
    s.add_argument("--codebook", required=True)
    s.add_argument("--labels", action="append", help="label CSV per frame file (repeat)")
    s.set_defaults(func=cmd_histograms)

    s = sub.add_parser("reduce", parents=[common], help="project histograms to 2-D")
    s.add_argument("histograms")
    s.add_argument("--method", choices=["pca", "tsne"])
    s.set_defaults(func=cmd_reduce)

    s = sub.add_parser("sample", parents=[common], help="per-family cluster subsampling")
    s.add_argument("histograms")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("render", parents=[common], help="pie-chart scatter SVG")
    s.add_argument("projection")
    s.add_argument("histograms")
    s.add_argument("--family")
    s.add_argument("--points-csv")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("metrics", parents=[common], help="accuracy, macro-F1 and kappa per tier")
    s.add_argument("ref")
    s.add_argument("hyp")
    s.add_argument("--duration", type=float)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("synth_config", nargs="?", help="corpus JSON; default is the three-regime demo")
    s.add_argument("--confusion-rate", type=float, help="also attach probability records")
    s.add_argument("--unlabeled", action="store_true", help="leave labels out of pipeline.json")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pipeline", parents=[common], help="run the whole workflow")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = _effective(args, load_config(args.config) if args.config else PipelineConfig())
        extra = {k: v for k, v in vars(args).items() if k not in ("func", "config", "seed", "threads", "out")}
        _announce(args.command, cfg, extra)
        with threadpool_limits(limits=1):
            args.func(args, cfg)
    except FileNotFoundError as exc:
        print(f"famviz: error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"famviz: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    except (FamvizError, ValueError, KeyError) as exc:
        print(f"famviz: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
