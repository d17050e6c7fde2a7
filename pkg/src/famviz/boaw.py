"""Audio-word codebooks and bag-of-audio-words window histograms."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, InsufficientDataError, MalformedInputError
from .frames import FrameSequence
from .timeline import LABELS, LabelSpan, _snap, label_name, window_composition

DEFAULT_K = 50
DEFAULT_N_ASSIGN = 5
DEFAULT_WINDOW = 30.0


@dataclass
class Codebook:
    centroids: np.ndarray
    seed: int = 0
    n_iters_run: int = 0
    inertia: float = 0.0
    inertia_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        if self.k < 1:
            raise MalformedInputError("a codebook needs at least one word")
        if not np.all(np.isfinite(self.centroids)):
            raise MalformedInputError("centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class WindowHistogram:
    family_id: str
    window_start: float
    tf: np.ndarray
    composition: dict = field(default_factory=dict)
    total_voc_fraction: float = 0.0
    n_frames: int = 0
    mass: float = 0.0


def _as_matrix(vectors) -> np.ndarray:
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise MalformedInputError("expected an n x dim matrix")
    if not np.all(np.isfinite(X)):
        raise MalformedInputError("vectors must be finite")
    return X


def sq_distances(X: np.ndarray, C: np.ndarray, chunk: int = 16384) -> np.ndarray:
    """Squared Euclidean distances, n x k."""
    cc = np.einsum("ij,ij->i", C, C)
    out = np.empty((X.shape[0], C.shape[0]))
    for lo in range(0, X.shape[0], chunk):
        x = X[lo:lo + chunk]
        d = np.einsum("ij,ij->i", x, x)[:, None] - 2.0 * (x @ C.T) + cc[None, :]
        np.maximum(d, 0.0, out=d)
        out[lo:lo + chunk] = d
    return out


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = sq_distances(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = X[idx]
        d2 = np.minimum(d2, sq_distances(X, centers[j:j + 1])[:, 0])
    return centers


def _inertia(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    r = X - C[labels]
    return float(np.einsum("ij,ij->", r, r))


def _update(X: np.ndarray, labels: np.ndarray, C: np.ndarray) -> np.ndarray:
    k = C.shape[0]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(C)
    np.add.at(sums, labels, X)
    new = C.copy()
    full = counts > 0
    new[full] = sums[full] / counts[full, None]
    empty = np.flatnonzero(~full)
    if empty.size:
        r = X - new[labels]
        far = np.argsort(-np.einsum("ij,ij->i", r, r), kind="stable")
        for j, idx in zip(empty, far):
            new[j] = X[idx]
    return new


def _best_transfer(X: np.ndarray, C: np.ndarray, labels: np.ndarray):
    """Single-point move that lowers inertia the most, as (point, cluster, change).

    Moving x from cluster a (size n_a) to b (size n_b) changes the inertia by
    n_b/(n_b+1)*|x-c_b|^2 - n_a/(n_a-1)*|x-c_a|^2. Singletons never move.
    """
    k = C.shape[0]
    counts = np.bincount(labels, minlength=k).astype(float)
    d = sq_distances(X, C)
    rows = np.arange(len(X))
    own = counts[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        removal = np.where(own > 1, own / (own - 1) * d[rows, labels], -np.inf)
    added = counts / (counts + 1) * d
    added[rows, labels] = np.inf
    target = np.argmin(added, axis=1)
    change = added[rows, target] - removal
    i = int(np.argmin(change))
    return i, int(target[i]), float(change[i])


def kmeans_fit(vectors, k: int = DEFAULT_K, seed: int = 0, max_iters: int = 300,
               tol: float = 1e-6, refine: bool = True) -> Codebook:
    """Lloyd's k-means with k-means++ seeding.

    Stops when the relative inertia improvement drops below ``tol``, when
    assignments stop changing, or after ``max_iters`` updates. Empty
    clusters are re-seeded at the points farthest from their centroids.

    With ``refine``, a converged Lloyd solution is tested for the best
    single-point transfer between clusters; if one lowers the inertia by more
    than ``tol`` (relative), it is applied and Lloyd resumes. This escapes
    Lloyd fixed points that are not local optima under point moves.
    ``inertia_history`` holds the inertia after every update of either kind.
    """
    X = _as_matrix(vectors)
    n = X.shape[0]
    if k < 1:
        raise MalformedInputError("k must be at least 1")
    if n < k:
        raise InsufficientDataError(f"{n} vectors cannot seed {k} clusters")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    labels = np.argmin(sq_distances(X, C), axis=1)
    inertia = _inertia(X, C, labels)
    history = [inertia]
    n_iter = 0
    while n_iter < max_iters and inertia > 0.0:
        C_new = _update(X, labels, C)
        labels_new = np.argmin(sq_distances(X, C_new), axis=1)
        inertia_new = _inertia(X, C_new, labels_new)
        if inertia_new > inertia:
            # only reachable through rounding at convergence
            break
        n_iter += 1
        converged = np.array_equal(labels_new, labels) or (inertia - inertia_new) < tol * inertia
        C, labels, inertia = C_new, labels_new, inertia_new
        history.append(inertia)
        if not converged:
            continue
        if not refine or n_iter >= max_iters:
            break
        i, j, change = _best_transfer(X, C, labels)
        if not change < -tol * inertia:
            break
        moved = labels.copy()
        moved[i] = j
        C_moved = _update(X, moved, C)
        inertia_moved = _inertia(X, C_moved, moved)
        if inertia_moved >= inertia:
            break
        n_iter += 1
        C, labels, inertia = C_moved, moved, inertia_moved
        history.append(inertia)
    return Codebook(C, seed=seed, n_iters_run=n_iter, inertia=inertia, inertia_history=history)


def nearest_word(vectors, codebook: Codebook) -> np.ndarray:
    X = _as_matrix(vectors)
    return np.argmin(sq_distances(X, codebook.centroids), axis=1)


def unit_weights(sq_dists: np.ndarray) -> np.ndarray:
    """Weight of each selected word: 1, i.e. plain multi-assignment counting."""
    return np.ones_like(sq_dists)


def assign_words(vectors, codebook: Codebook, n_assign: int = DEFAULT_N_ASSIGN,
                 weight_fn: Callable[[np.ndarray], np.ndarray] = unit_weights):
    """Indices (n x n_assign, nearest first) and weights of the selected words.

    Equal distances go to the lower word index.
    """
    X = _as_matrix(vectors)
    if X.shape[1] != codebook.dim:
        raise DimensionMismatchError(f"vectors have dim {X.shape[1]}, codebook has {codebook.dim}")
    if not 1 <= n_assign <= codebook.k:
        raise MalformedInputError(f"n_assign must be in [1, {codebook.k}]")
    d = sq_distances(X, codebook.centroids)
    order = np.argsort(d, axis=1, kind="stable")[:, :n_assign]
    chosen = np.take_along_axis(d, order, axis=1)
    return order, weight_fn(chosen)


def soft_assign(vector, codebook: Codebook, n_assign: int = DEFAULT_N_ASSIGN,
                weight_fn: Callable[[np.ndarray], np.ndarray] = unit_weights) -> list[tuple[int, float]]:
    v = np.asarray(vector, dtype=np.float64).reshape(1, -1)
    idx, w = assign_words(v, codebook, n_assign, weight_fn)
    return [(int(i), float(x)) for i, x in zip(idx[0], w[0])]


def frames_per_window(hop: float, window_len: float) -> int:
    ratio = window_len / hop
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-6:
        raise MalformedInputError(f"window length {window_len}s is not a multiple of hop {hop}s")
    return m


def window_histograms(frames: FrameSequence, codebook: Codebook, window_len: float = DEFAULT_WINDOW,
                      timeline: Sequence[LabelSpan] | None = None, n_assign: int = DEFAULT_N_ASSIGN,
                      weight_fn: Callable[[np.ndarray], np.ndarray] = unit_weights) -> list[WindowHistogram]:
    """Normalized word histograms over consecutive non-overlapping windows.

    Frames go to the window containing their start time. Only complete
    windows are kept. Silence frames count like any other frame; labels only
    feed the per-window composition.
    """
    if frames.dim != codebook.dim:
        raise DimensionMismatchError(f"frames have dim {frames.dim}, codebook has {codebook.dim}")
    per = frames_per_window(frames.grid.hop, window_len)
    n_windows = frames.n_frames // per
    if n_windows == 0:
        return []
    idx, w = assign_words(frames.vectors[:n_windows * per], codebook, n_assign, weight_fn)
    out = []
    for win in range(n_windows):
        sl = slice(win * per, (win + 1) * per)
        counts = np.bincount(idx[sl].ravel(), weights=w[sl].ravel(), minlength=codebook.k)
        mass = float(counts.sum())
        start = _snap(frames.source_offset + win * window_len)
        comp, total = {}, 0.0
        if timeline is not None:
            comp, total = window_composition(timeline, start, window_len)
        out.append(WindowHistogram(frames.family_id, start, counts / mass, comp, total, per, mass))
    return out


# -- CSV ------------------------------------------------------------------

def write_codebook(codebook: Codebook, path) -> None:
    """Centroids as CSV, metadata in a ``.json`` sidecar next to it."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["word"] + [f"c{j}" for j in range(codebook.dim)])
    for i, row in enumerate(codebook.centroids):
        w.writerow([i] + [repr(float(x)) for x in row])
    path.write_text(buf.getvalue())
    meta = {
        "k": codebook.k,
        "dim": codebook.dim,
        "seed": codebook.seed,
        "n_iters_run": codebook.n_iters_run,
        "inertia": codebook.inertia,
        "inertia_history": codebook.inertia_history,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_codebook(path) -> Codebook:
    path = Path(path)
    rows = list(csv.reader(path.read_text().splitlines()))
    if not rows or rows[0][:1] != ["word"]:
        raise MalformedInputError(f"{path}: not a codebook CSV")
    try:
        centroids = np.array([[float(x) for x in r[1:]] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise MalformedInputError(f"{path}: {exc}") from None
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return Codebook(centroids, seed=meta.get("seed", 0), n_iters_run=meta.get("n_iters_run", 0),
                    inertia=meta.get("inertia", 0.0), inertia_history=meta.get("inertia_history", []))


def _fmt(x: float) -> str:
    return repr(float(x))


def format_histograms_csv(hists: Sequence[WindowHistogram]) -> str:
    k = len(hists[0].tf) if hists else 0
    comp_cols = [f"frac_{label_name(*lab)}" for lab in LABELS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family_id", "window_start", "n_frames", "mass", "total_voc_fraction"]
               + [f"tf_{j}" for j in range(k)] + comp_cols)
    for h in hists:
        comp = [_fmt(h.composition[lab]) for lab in LABELS] if h.composition else [""] * len(LABELS)
        w.writerow([h.family_id, _fmt(h.window_start), h.n_frames, _fmt(h.mass), _fmt(h.total_voc_fraction)]
                   + [_fmt(x) for x in h.tf] + comp)
    return buf.getvalue()


def write_histograms_csv(hists: Sequence[WindowHistogram], path) -> None:
    Path(path).write_text(format_histograms_csv(hists))


def read_histograms_csv(path) -> list[WindowHistogram]:
    path = Path(path)
    reader = csv.DictReader(io.StringIO(path.read_text()))
    fields = reader.fieldnames or []
    tf_cols = [c for c in fields if c.startswith("tf_")]
    if "family_id" not in fields or not tf_cols:
        raise MalformedInputError(f"{path}: not a histogram CSV")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            comp = {}
            if row.get(f"frac_{label_name(*LABELS[0])}"):
                comp = {lab: float(row[f"frac_{label_name(*lab)}"]) for lab in LABELS}
            out.append(WindowHistogram(
                row["family_id"], float(row["window_start"]),
                np.array([float(row[c]) for c in tf_cols]), comp,
                float(row["total_voc_fraction"]), int(row["n_frames"]), float(row["mass"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedInputError(f"{path}:{lineno}: bad field ({exc})") from None
    return out


def histogram_matrix(hists: Sequence[WindowHistogram]) -> np.ndarray:
    if not hists:
        return np.zeros((0, 0))
    return np.vstack([h.tf for h in hists])


def expected_windows(n_frames: int, hop: float, window_len: float) -> int:
    return int(math.floor(n_frames * hop / window_len + 1e-9))
