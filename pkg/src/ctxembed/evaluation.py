"""Link-prediction metrics, clustering pipeline, and attention export.

All functions here are pure with respect to their inputs; randomness enters
only through explicitly passed generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln
from scipy.stats import rankdata

from .graph import Graph, ValidationError, sample_neighborhood
from .model import GlobalEmbedding, forward


@dataclass(frozen=True)
class RankedScores:
    """Scores of held-out true edges (pos) and sampled non-edges (neg)."""

    pos: np.ndarray
    neg: np.ndarray

    def validate(self) -> None:
        if len(self.pos) == 0 or len(self.neg) == 0:
            raise ValidationError("need at least one positive and one negative score")
        if not (np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.neg))):
            raise ValidationError("scores must be finite")


def auc(scores: RankedScores) -> float:
    """Probability a positive outranks a negative, ties counted half.

    Rank-sum formulation with midrank tie correction; O((p+q) log(p+q)).
    """
    scores.validate()
    pos = np.asarray(scores.pos, dtype=np.float64)
    neg = np.asarray(scores.neg, dtype=np.float64)
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    n_pos, n_neg = pos.shape[0], neg.shape[0]
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def average_precision(scores: RankedScores) -> float:
    """Area under the precision-recall sweep of the descending score ranking.

    Equal scores are collapsed into a single threshold, so ordering within a
    tie group cannot affect the result.
    """
    scores.validate()
    pos = np.asarray(scores.pos, dtype=np.float64)
    neg = np.asarray(scores.neg, dtype=np.float64)
    all_scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.shape[0]), np.zeros(neg.shape[0])])
    order = np.argsort(-all_scores, kind="stable")
    sorted_scores = all_scores[order]
    sorted_labels = labels[order]
    # Threshold boundaries: last index of each tie group.
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    idx = np.concatenate([boundary, [sorted_scores.shape[0] - 1]])
    tp = np.cumsum(sorted_labels)[idx]
    fp = np.cumsum(1 - sorted_labels)[idx]
    precision = tp / (tp + fp)
    recall = tp / pos.shape[0]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def node_features_for_clustering(
    emb: GlobalEmbedding,
    g: Graph,
    mode: str = "averaged-context",
    size: int = 100,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Per-node feature matrix fed to clustering.

    ``global`` returns the embedding rows.  ``averaged-context`` averages a
    node's context-sensitive representation over all of its training-graph
    partners (one mutual-attention block per incident edge, dropout off);
    nodes with no partners fall back to their embedding row.
    """
    if mode == "global":
        return emb.matrix[: g.n].copy()
    if mode != "averaged-context":
        raise ValidationError(f"unknown clustering feature mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    feats = np.zeros((g.n, emb.dim))
    samples = {
        u: sample_neighborhood(g, u, size, rng)
        for u in range(g.n)
        if g.degree(u) > 0
    }
    counts = np.zeros(g.n, dtype=np.int64)
    for s, t in g.edges:
        s, t = int(s), int(t)
        blk = forward(emb, samples[s], samples[t])
        feats[s] += blk.r_s
        feats[t] += blk.r_t
        counts[s] += 1
        counts[t] += 1
    touched = counts > 0
    feats[touched] /= counts[touched, None]
    feats[~touched] = emb.matrix[: g.n][~touched]
    return feats


@dataclass(frozen=True)
class ClusterResult:
    assignments: np.ndarray  # (n,) int cluster ids in [0, k)
    k: int
    inertia: float
    n_iter: int
    inertia_history: tuple[float, ...]  # per-iteration, winning restart


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a center
            centers[i] = points[rng.integers(n)]
            continue
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # ||x - c||^2 expanded; recompute exact distances only for the argmin.
    d2 = (
        np.sum(points ** 2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers ** 2, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    best = np.sum((points - centers[labels]) ** 2, axis=1)
    return labels, best


def kmeans(
    points: np.ndarray,
    k: int,
    restarts: int = 10,
    max_iter: int = 300,
    rng: np.random.Generator | None = None,
) -> ClusterResult:
    """Lloyd's algorithm with k-means++ seeding, best of ``restarts`` by inertia."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or k > n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    if rng is None:
        rng = np.random.default_rng(0)
    best: ClusterResult | None = None
    for _ in range(max(1, restarts)):
        centers = _kmeans_pp_seed(points, k, rng)
        labels = np.full(n, -1, dtype=np.int64)
        history: list[float] = []
        for it in range(1, max_iter + 1):
            new_labels, dists = _assign(points, centers)
            history.append(float(dists.sum()))
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                member = labels == c
                if member.any():
                    centers[c] = points[member].mean(axis=0)
                else:
                    centers[c] = points[int(np.argmax(dists))]  # re-seed empty cluster
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = ClusterResult(
                assignments=labels, k=k, inertia=inertia,
                n_iter=len(history), inertia_history=tuple(history),
            )
    return best


def _contingency(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    _, yi = np.unique(y, return_inverse=True)
    _, pi = np.unique(yhat, return_inverse=True)
    table = np.zeros((yi.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (yi, pi), 1)
    return table


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _mutual_information(table: np.ndarray) -> float:
    n = table.sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = (a[:, None] * b[None, :])[nz].astype(np.float64)
    return float((nij / n * (np.log(nij) + np.log(n) - np.log(outer))).sum())


def _check_label_args(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y).reshape(-1)
    yhat = np.asarray(yhat).reshape(-1)
    if y.shape[0] != yhat.shape[0]:
        raise ValidationError("label arrays must have equal length")
    if y.shape[0] == 0:
        raise ValidationError("label arrays must be non-empty")
    return y, yhat


def nmi(y, yhat) -> float:
    """Mutual information normalized by the geometric mean of the entropies."""
    y, yhat = _check_label_args(y, yhat)
    table = _contingency(y, yhat)
    h_y = _entropy(table.sum(axis=1))
    h_p = _entropy(table.sum(axis=0))
    if h_y == 0.0 or h_p == 0.0:
        # Degenerate partition(s): defined as 1 iff the partitions coincide.
        return 1.0 if h_y == h_p == 0.0 else 0.0
    return _mutual_information(table) / np.sqrt(h_y * h_p)


def expected_mutual_information(table: np.ndarray) -> float:
    """E[I] under the permutation (hypergeometric) model of the fixed margins."""
    a = table.sum(axis=1).astype(np.int64)
    b = table.sum(axis=0).astype(np.int64)
    n = int(table.sum())
    emi = 0.0
    log_n = np.log(n)
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            term = nij / n * (np.log(nij) + log_n - np.log(ai) - np.log(bj))
            log_p = (
                gammaln(ai + 1) + gammaln(bj + 1)
                + gammaln(n - ai + 1) + gammaln(n - bj + 1)
                - gammaln(n + 1) - gammaln(nij + 1)
                - gammaln(ai - nij + 1) - gammaln(bj - nij + 1)
                - gammaln(n - ai - bj + nij + 1)
            )
            emi += float((term * np.exp(log_p)).sum())
    return emi


def ami(y, yhat) -> float:
    """Chance-adjusted mutual information, arithmetic-mean normalizer."""
    y, yhat = _check_label_args(y, yhat)
    table = _contingency(y, yhat)
    h_y = _entropy(table.sum(axis=1))
    h_p = _entropy(table.sum(axis=0))
    if h_y == 0.0 or h_p == 0.0:
        return 1.0 if h_y == h_p == 0.0 else 0.0
    mi = _mutual_information(table)
    emi = expected_mutual_information(table)
    denom = 0.5 * (h_y + h_p) - emi
    if denom == 0.0:
        return 0.0
    return (mi - emi) / denom


def export_attention(
    emb: GlobalEmbedding,
    g: Graph,
    pairs,
    size: int = 100,
    rng: np.random.Generator | None = None,
) -> list[dict]:
    """Attention weights of both endpoints' neighbors for each requested pair.

    Each record lists a pair's neighbor ids with their normalized attention
    weights, sorted descending.  Ids are reported as original node labels
    when the graph carries them.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    labels = g.node_labels or tuple(str(i) for i in range(g.n))
    report = []
    for s, t in pairs:
        s, t = int(s), int(t)
        if g.degree(s) == 0 or g.degree(t) == 0:
            raise ValidationError(f"pair ({s}, {t}) has an isolated endpoint")
        ns = sample_neighborhood(g, s, size, rng)
        nt = sample_neighborhood(g, t, size, rng)
        blk = forward(emb, ns, nt)

        def ranked(sample, weights):
            rows = [
                {"id": labels[int(i)], "weight": float(w)}
                for i, w, real in zip(sample.ids, weights, sample.mask)
                if real
            ]
            rows.sort(key=lambda r: -r["weight"])
            return rows

        report.append({
            "source": labels[s],
            "target": labels[t],
            "source_neighbors": ranked(ns, blk.a_s),
            "target_neighbors": ranked(nt, blk.a_t),
        })
    return report
