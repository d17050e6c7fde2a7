"""2-D projections of window histograms: PCA and exact t-SNE."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, InsufficientDataError, MalformedInputError

MACHINE_EPSILON = np.finfo(np.double).eps

TSNE_DEFAULTS = {
    "perplexity": 30.0,
    "n_iters": 1000,
    "early_exaggeration": 12.0,
    "exaggeration_iters": 250,
    "learning_rate": 200.0,
    "momentum": 0.5,
    "final_momentum": 0.8,
    "adaptive_gains": True,
    "min_gain": 0.01,
    "init": "pca",
    "perplexity_tol": 1e-5,
    "perplexity_steps": 50,
}


@dataclass
class Projection:
    method: str
    coords: np.ndarray
    params: dict = field(default_factory=dict)
    seed: int = 0
    diagnostics: dict = field(default_factory=dict)
    components: np.ndarray | None = None


def _check_data(data, min_rows: int) -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise MalformedInputError("expected an n x d matrix")
    if X.shape[0] < min_rows:
        raise InsufficientDataError(f"need at least {min_rows} points, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise MalformedInputError("data must be finite")
    return X


def pca_2d(data) -> Projection:
    """Project mean-centred data onto its two leading principal axes.

    Each axis is signed so its largest-magnitude loading is positive. The
    explained-variance ratios are relative to the total variance.
    """
    X = _check_data(data, 2)
    if X.shape[1] < 2:
        raise MalformedInputError("PCA to 2-D needs at least 2 features")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s ** 2
    total = var.sum()
    if total <= 0 or not np.isfinite(total):
        raise DegenerateInputError("zero-variance data: every row is identical")
    comps = vt[:2].copy()
    for c in comps:
        j = np.argmax(np.abs(c))
        if c[j] < 0:
            c *= -1.0
    ratio = var[:2] / total
    coords = Xc @ comps.T
    n = X.shape[0]
    return Projection(
        "PCA", coords, params={}, seed=0,
        diagnostics={
            "explained_variance_ratio": [float(r) for r in ratio],
            "explained_variance": [float(v / (n - 1)) for v in var[:2]],
        },
        components=comps,
    )


def _sq_pairwise(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] - 2.0 * (X @ X.T) + sq[None, :]
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5,
                           n_steps: int = 50, beta_bounds=(1e-12, 1e12)):
    """Row-conditional Gaussian affinities matched to ``perplexity``.

    Bisects log(beta) within ``beta_bounds`` per point until the row entropy
    (nats) is within ``tol`` of log(perplexity). Returns the n x n
    conditional matrix, the betas and the achieved entropies.
    """
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.empty(n)
    entropies = np.empty(n)
    lo_b, hi_b = np.log(beta_bounds[0]), np.log(beta_bounds[1])
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        lo, hi, lb = lo_b, hi_b, 0.0
        for _ in range(n_steps):
            beta = np.exp(lb)
            w = np.exp(-beta * d)
            sw = w.sum()
            p = w / sw
            H = np.log(sw) + beta * np.dot(d, p)
            if abs(H - target) < tol:
                break
            if H > target:
                lo = lb
            else:
                hi = lb
            lb = 0.5 * (lo + hi)
        betas[i] = np.exp(lb)
        entropies[i] = H
        P[i, np.arange(n) != i] = p
    return P, betas, entropies


def joint_affinities(X, perplexity: float, tol: float = 1e-5, n_steps: int = 50):
    X = np.asarray(X, dtype=np.float64)
    Pc, betas, H = conditional_affinities(_sq_pairwise(X), perplexity, tol, n_steps)
    P = (Pc + Pc.T) / (2.0 * X.shape[0])
    return P, betas, H


def kl_and_gradient(Y: np.ndarray, P: np.ndarray):
    """KL(P || Q) for the Student-t kernel and its gradient w.r.t. ``Y``."""
    num = 1.0 / (1.0 + _sq_pairwise(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), MACHINE_EPSILON)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    W = (P - Q) * num
    grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
    return kl, grad


def _clamp_perplexity(perplexity: float, n: int) -> float:
    limit = (n - 1) / 3.0
    if perplexity >= limit:
        clamped = max(2.0, limit)
        warnings.warn(f"perplexity {perplexity} too large for {n} points, using {clamped:.4g}",
                      stacklevel=3)
        return clamped
    return perplexity


def tsne_2d(data, perplexity: float = 30.0, n_iters: int = 1000, early_exaggeration: float = 12.0,
            learning_rate: float = 200.0, seed: int = 0, exaggeration_iters: int = 250,
            adaptive_gains: bool = True, checkpoints: Sequence[int] = ()) -> Projection:
    """Exact t-SNE to 2-D, initialized from scaled PCA coordinates.

    ``checkpoints`` lists iteration counts at which the (unexaggerated) KL
    divergence is recorded in ``diagnostics["kl_history"]``.
    """
    X = _check_data(data, 4)
    n = X.shape[0]
    perplexity = _clamp_perplexity(perplexity, n)
    params = dict(TSNE_DEFAULTS, perplexity=perplexity, n_iters=n_iters,
                  early_exaggeration=early_exaggeration, learning_rate=learning_rate,
                  exaggeration_iters=exaggeration_iters, adaptive_gains=adaptive_gains)
    P, _, H = joint_affinities(X, perplexity, params["perplexity_tol"], params["perplexity_steps"])

    rng = np.random.default_rng(seed)
    try:
        init = pca_2d(X).coords
        Y = init / np.std(init[:, 0]) * 1e-4
    except DegenerateInputError:
        Y = rng.normal(scale=1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    checkpoints = set(int(c) for c in checkpoints)
    history = {}
    kl = float("nan")
    for it in range(n_iters):
        exaggerate = it < exaggeration_iters
        momentum = params["momentum"] if exaggerate else params["final_momentum"]
        kl, grad = kl_and_gradient(Y, P * early_exaggeration if exaggerate else P)
        if adaptive_gains:
            flipped = velocity * grad < 0.0
            gains = np.where(flipped, gains + 0.2, gains * 0.8)
            np.maximum(gains, params["min_gain"], out=gains)
        velocity = momentum * velocity - learning_rate * gains * grad
        Y = Y + velocity
        if it + 1 in checkpoints:
            history[it + 1] = kl_and_gradient(Y, P)[0]
    final_kl = kl_and_gradient(Y, P)[0]
    target = np.log(perplexity)
    return Projection(
        "TSNE", Y, params=params, seed=seed,
        diagnostics={
            "kl_divergence": final_kl,
            "n_iter": n_iters,
            "kl_history": {str(k): v for k, v in sorted(history.items())},
            "max_log_perplexity_error": float(np.max(np.abs(H - target))),
        },
    )


# -- serialization --------------------------------------------------------

def format_projection_csv(keys: Sequence[tuple[str, float]], proj: Projection) -> str:
    if len(keys) != len(proj.coords):
        raise MalformedInputError("one key per projected point is required")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family_id", "window_start", "x", "y"])
    for (fam, start), (x, y) in zip(keys, proj.coords):
        w.writerow([fam, repr(float(start)), repr(float(x)), repr(float(y))])
    return buf.getvalue()


def projection_sidecar(proj: Projection) -> dict:
    return {"method": proj.method, "seed": proj.seed, "params": proj.params,
            "diagnostics": proj.diagnostics}


def write_projection(keys, proj: Projection, path) -> None:
    path = Path(path)
    path.write_text(format_projection_csv(keys, proj))
    path.with_suffix(".json").write_text(
        json.dumps(projection_sidecar(proj), indent=2, sort_keys=True) + "\n")


def read_projection(path) -> tuple[list[tuple[str, float]], Projection]:
    path = Path(path)
    reader = csv.DictReader(io.StringIO(path.read_text()))
    if reader.fieldnames != ["family_id", "window_start", "x", "y"]:
        raise MalformedInputError(f"{path}: expected header family_id,window_start,x,y")
    keys, coords = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            keys.append((row["family_id"], float(row["window_start"])))
            coords.append((float(row["x"]), float(row["y"])))
        except (TypeError, ValueError) as exc:
            raise MalformedInputError(f"{path}:{lineno}: {exc}") from None
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    proj = Projection(meta.get("method", "?"), np.array(coords, dtype=np.float64).reshape(-1, 2),
                      meta.get("params", {}), meta.get("seed", 0), meta.get("diagnostics", {}))
    return keys, proj
