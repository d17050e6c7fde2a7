"""Slow, obviously-correct reference computations used by the tests."""

import itertools

import numpy as np


def exhaustive_kmeans_inertia(X: np.ndarray, k: int) -> float:
    """Minimum within-cluster sum of squares over every labeling of the rows."""
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(X)):
        labels = np.array(labels)
        sse = 0.0
        for c in range(k):
            members = X[labels == c]
            if len(members):
                sse += float(((members - members.mean(axis=0)) ** 2).sum())
        best = min(best, sse)
    return best


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    """KL(P || Q) with Q the Student-t similarity of the rows of Y, term by term."""
    n = len(Y)
    num = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                num[i, j] = 1.0 / (1.0 + np.sum((Y[i] - Y[j]) ** 2))
    Q = num / num.sum()
    kl = 0.0
    for i in range(n):
        for j in range(n):
            if P[i, j] > 0:
                kl += P[i, j] * np.log(P[i, j] / Q[i, j])
    return kl


def finite_difference_gradient(P: np.ndarray, Y: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(Y)
    for idx in np.ndindex(*Y.shape):
        up, down = Y.copy(), Y.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (kl_divergence(P, up) - kl_divergence(P, down)) / (2 * h)
    return g


def kappa_by_hand(counts) -> tuple[float, float, float]:
    """(p_o, p_e, kappa) from plain nested-list arithmetic."""
    total = sum(sum(r) for r in counts)
    c = len(counts)
    p_o = sum(counts[i][i] for i in range(c)) / total
    rows = [sum(counts[i]) / total for i in range(c)]
    cols = [sum(counts[i][j] for i in range(c)) / total for j in range(c)]
    p_e = sum(r * q for r, q in zip(rows, cols))
    kappa = (p_o - p_e) / (1 - p_e) if p_e < 1 else float("nan")
    return p_o, p_e, kappa


def knn_accuracy(coords: np.ndarray, labels, k: int = 5) -> float:
    """Leave-one-out k-NN accuracy; ties in the vote go to the nearest member."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    d = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    hits = 0
    for i in range(len(coords)):
        nn = np.argsort(d[i], kind="stable")[:k]
        votes = {}
        for rank, j in enumerate(nn):
            n, first = votes.get(labels[j], (0, rank))
            votes[labels[j]] = (n + 1, first)
        pred = max(votes, key=lambda lab: (votes[lab][0], -votes[lab][1]))
        hits += pred == labels[i]
    return hits / len(coords)
