"""End-to-end workflow: codebook, histograms, subsampling, projection, figures."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audioenergy, boaw, dimred, viz
from .config import PipelineConfig
from .frames import FrameSequence, read_frames
from .timeline import (
    LabelSpan,
    SpeakerTier,
    decode_machine_labels,
    majority_label,
    read_spans_csv,
    resolve_conflicts,
    write_spans_csv,
)

log = logging.getLogger(__name__)


@dataclass
class Family:
    family_id: str
    frames: FrameSequence
    labels: list[LabelSpan] | None = None
    timeline: list[LabelSpan] | None = None


def safe_name(family_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", family_id)


def load_families(cfg: PipelineConfig) -> list[Family]:
    out = []
    for fam in cfg.families:
        frames = read_frames(fam.frames, fam.family_id)
        if abs(frames.grid.hop - cfg.grid.hop) > 1e-9 or abs(frames.grid.window_len - cfg.grid.window_len) > 1e-9:
            log.warning("%s: frame grid %s/%s differs from config %s/%s", fam.frames,
                        frames.grid.window_len, frames.grid.hop, cfg.grid.window_len, cfg.grid.hop)
        labels = read_spans_csv(fam.labels) if fam.labels else None
        out.append(Family(fam.family_id, frames, labels))
    return out


def corpus_energy_threshold(families: list[Family]) -> float | None:
    """0.99 x the quietest CHN frame over labeled families that carry energy."""
    chn_min = []
    for fam in families:
        if fam.labels is None or fam.frames.energy is None:
            continue
        frame_labels = majority_label(fam.labels, fam.frames.grid)
        idx = [f.frame_index for f in frame_labels if f.tier is SpeakerTier.CHN]
        if idx:
            chn_min.append(float(np.min(fam.frames.energy[idx].astype(np.float64))))
    if not chn_min:
        return None
    return audioenergy.derive_energy_threshold(np.array(chn_min), range(len(chn_min)))


def resolve_energy_threshold(cfg: PipelineConfig, families: list[Family]) -> float | None:
    setting = cfg.thresholds.energy
    if setting is None:
        return None
    if setting == "auto":
        thr = corpus_energy_threshold(families)
        if thr is None:
            log.warning("no labeled CHN frames with energy; decoding without an energy gate")
        return thr
    return float(setting)


def decode_family(frames: FrameSequence, confidence: float, energy_threshold: float | None) -> list[LabelSpan]:
    if frames.probs is None or not frames.has_probs().all():
        raise ValueError(f"family {frames.family_id!r}: frames lack probability records")
    labels = decode_machine_labels(frames.probs, frames.grid, confidence, frames.energy,
                                   energy_threshold if frames.energy is not None else None)
    return resolve_conflicts(labels, frames.grid)


def assign_timelines(cfg: PipelineConfig, families: list[Family], out: Path | None) -> float | None:
    thr = resolve_energy_threshold(cfg, families)
    for fam in families:
        if fam.labels is not None:
            fam.timeline = fam.labels
        elif fam.frames.probs is not None and fam.frames.has_probs().all():
            fam.timeline = decode_family(fam.frames, cfg.thresholds.confidence, thr)
            if out is not None:
                write_spans_csv(fam.timeline, out / f"{safe_name(fam.family_id)}.decoded.csv")
    return thr


def reduce(data: np.ndarray, cfg: PipelineConfig) -> dimred.Projection:
    r = cfg.reducer
    if r.method.lower() == "pca":
        proj = dimred.pca_2d(data)
        proj.seed = r.seed
        return proj
    return dimred.tsne_2d(data, perplexity=r.perplexity, n_iters=r.n_iters,
                          early_exaggeration=r.early_exaggeration, learning_rate=r.learning_rate,
                          seed=r.seed, checkpoints=(250,))


def render_spec(cfg: PipelineConfig, title: str = "") -> viz.RenderSpec:
    r = cfg.render
    return viz.RenderSpec(width=r.width, height=r.height, margin=r.margin, min_radius=r.min_radius,
                          max_radius=r.max_radius, palette=viz.parse_palette(r.palette),
                          legend=r.legend, seed=cfg.reducer.seed, title=title)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage and write the artifacts into ``cfg.out``.

    Families are processed in config order; ``cfg.threads`` only sets how many
    families are handled at once, results do not depend on it.
    """
    if not cfg.families:
        raise ValueError("config lists no families")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    families = load_families(cfg)
    dims = {f.frames.dim for f in families}
    if len(dims) != 1:
        raise ValueError(f"families disagree on embedding dimension: {sorted(dims)}")
    thr = assign_timelines(cfg, families, out)

    cb_cfg = cfg.codebook
    corpus = np.concatenate([f.frames.vectors for f in families]).astype(np.float64)
    codebook = boaw.kmeans_fit(corpus, cb_cfg.k, seed=cb_cfg.seed, max_iters=cb_cfg.max_iters, tol=cb_cfg.tol)
    boaw.write_codebook(codebook, out / "codebook.csv")
    log.info("codebook: k=%d, %d iterations, inertia %.6g", codebook.k, codebook.n_iters_run, codebook.inertia)

    def histograms(fam: Family):
        return boaw.window_histograms(fam.frames, codebook, cfg.window_len, fam.timeline, cb_cfg.n_assign)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        per_family = list(pool.map(histograms, families))
    all_hists = [h for hs in per_family for h in hs]
    boaw.write_histograms_csv(all_hists, out / "histograms.csv")

    sub = cfg.subsample
    if sub.enabled:
        def sample(hs):
            return viz.cluster_subsample(hs, sub.n_clusters, sub.per_cluster, sub.seed) if hs else []
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_family = list(pool.map(sample, per_family))
    sampled = [h for hs in per_family for h in hs]
    boaw.write_histograms_csv(sampled, out / "sampled.csv")

    written = {"codebook": "codebook.csv", "histograms": "histograms.csv", "sampled": "sampled.csv",
               "projections": [], "figures": []}
    groups = [("", sampled)] if cfg.reducer.scope == "combined" else [
        (fam.family_id, hs) for fam, hs in zip(families, per_family)]
    for gid, hs in groups:
        if not hs:
            continue
        proj = reduce(boaw.histogram_matrix(hs), cfg)
        keys = [(h.family_id, h.window_start) for h in hs]
        suffix = f"_{safe_name(gid)}" if gid else ""
        dimred.write_projection(keys, proj, out / f"projection{suffix}.csv")
        written["projections"].append(f"projection{suffix}.csv")
        points = viz.pie_points(proj.coords, hs)
        (out / f"pie_points{suffix}.csv").write_text(viz.format_pie_points_csv(points, keys))
        name = f"figure{suffix}.svg"
        (out / name).write_bytes(viz.render_svg(points, render_spec(cfg, gid or "all families")))
        written["figures"].append(name)
        if not gid and cfg.render.per_family and len(families) > 1:
            for fam in families:
                sel = [i for i, h in enumerate(hs) if h.family_id == fam.family_id]
                if not sel:
                    continue
                name = f"figure_{safe_name(fam.family_id)}.svg"
                fam_points = [points[i] for i in sel]
                (out / name).write_bytes(viz.render_svg(fam_points, render_spec(cfg, fam.family_id)))
                written["figures"].append(name)

    summary = {
        "families": [f.family_id for f in families],
        "n_histograms": len(all_hists),
        "n_sampled": len(sampled),
        "energy_threshold": thr,
        "codebook_inertia": codebook.inertia,
        "outputs": written,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
