"""Mutual-attention embedding model: forward pass, analytic gradients, training.

A node's representation is context-sensitive: for a pair (s, t), each side
aggregates its own sampled neighborhood with attention weights derived from
the best alignment against the other side's neighborhood.  Training maximizes
edge likelihood with logistic negative sampling; all gradients are derived by
hand (max-pooling routes gradient through the argmax entry only).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .graph import (
    Graph,
    NegativeSampler,
    NeighborhoodSample,
    ValidationError,
    build_negative_sampler,
    sample_neighborhood,
)
from .seeding import rng_for

DOT_CLAMP = 30.0  # dot products clamped before exponentiation

VARIANTS = ("goat", "global")
NEGATIVE_MODES = ("context", "global")
RESAMPLE_MODES = ("epoch", "fixed")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def log_sigmoid(x):
    """log(sigmoid(x)), overflow-safe via the softplus identity."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def sigmoid(x):
    return expit(x)


def _clamp_dots(x):
    return np.clip(x, -DOT_CLAMP, DOT_CLAMP)


@dataclass
class GlobalEmbedding:
    """Trainable (n+1) x d matrix; row n is the frozen all-zero padding row."""

    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def copy(self) -> "GlobalEmbedding":
        return GlobalEmbedding(self.matrix.copy())


def init_embedding(n: int, dim: int, rng: np.random.Generator) -> GlobalEmbedding:
    """Entries i.i.d. uniform in [-0.5/d, 0.5/d]; padding row exactly zero."""
    if n < 1 or dim < 1:
        raise ValidationError("n and dim must be >= 1")
    matrix = (rng.random((n + 1, dim)) - 0.5) / dim
    matrix[n, :] = 0.0
    return GlobalEmbedding(matrix)


@dataclass
class BlockContext:
    """Intermediates retained by :func:`forward` for the backward pass."""

    s_ids: np.ndarray
    t_ids: np.ndarray
    s_mask: np.ndarray
    t_mask: np.ndarray
    S: np.ndarray        # (N, d) dropped message rows for the s side
    T: np.ndarray
    p_s: np.ndarray      # (N,) normalized attention
    p_t: np.ndarray
    j_star: np.ndarray   # per-row argmax into T (lowest index on ties)
    i_star: np.ndarray   # per-column argmax into S
    drop_s: np.ndarray | float  # inverted-dropout multipliers (1.0 when off)
    drop_t: np.ndarray | float
    r_s: np.ndarray
    r_t: np.ndarray


@dataclass
class BlockOutput:
    """Context-sensitive pair representations plus their attention vectors."""

    r_s: np.ndarray
    r_t: np.ndarray
    a_s: np.ndarray
    a_t: np.ndarray
    alignment: np.ndarray | None = None
    ctx: BlockContext | None = None


def _masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over masked-true entries; exactly zero elsewhere."""
    x = np.where(mask, scores, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _dropout_multiplier(shape, rate: float, rng: np.random.Generator,
                        dtype=np.float64) -> np.ndarray:
    keep = 1.0 - rate
    mask = rng.random(shape, dtype=np.float32) >= rate
    return mask.astype(dtype) * dtype(1.0 / keep)


def forward(
    emb: GlobalEmbedding,
    ns: NeighborhoodSample,
    nt: NeighborhoodSample,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    *,
    keep_alignment: bool = False,
    retain: bool = False,
    _drop_s: np.ndarray | None = None,
    _drop_t: np.ndarray | None = None,
) -> BlockOutput:
    """One mutual-attention block over two neighborhood samples.

    The alignment matrix holds all pairwise dot products between the two
    sides' neighbor embeddings.  Each side's attention score for a neighbor
    is its best alignment against the other side (row/column max over valid
    entries); softmax over valid slots yields the weights that mix the
    neighbor embeddings into the context-sensitive representations.

    With ``training=True``, inverted dropout is applied to the message
    matrices before the alignment products.
    """
    if not ns.mask.any() or not nt.mask.any():
        raise ValidationError("neighborhood sample is entirely padding")
    S = emb.matrix[ns.ids]  # (N, d); padded rows are the zero row
    T = emb.matrix[nt.ids]
    drop_s: np.ndarray | float = 1.0
    drop_t: np.ndarray | float = 1.0
    if training and (dropout > 0.0 or _drop_s is not None or _drop_t is not None):
        if _drop_s is not None:
            drop_s = _drop_s
        elif dropout > 0.0:
            if rng is None:
                raise ValidationError("training dropout requires an rng")
            drop_s = _dropout_multiplier(S.shape, dropout, rng)
        if _drop_t is not None:
            drop_t = _drop_t
        elif dropout > 0.0:
            drop_t = _dropout_multiplier(T.shape, dropout, rng)
        S = S * drop_s
        T = T * drop_t

    A = S @ T.T  # alignment, A[i, j] = S_i . T_j
    am = np.where(nt.mask[None, :], A, -np.inf)
    a_s_raw = am.max(axis=1)
    j_star = am.argmax(axis=1)
    am2 = np.where(ns.mask[:, None], A, -np.inf)
    a_t_raw = am2.max(axis=0)
    i_star = am2.argmax(axis=0)

    p_s = _masked_softmax(a_s_raw, ns.mask)
    p_t = _masked_softmax(a_t_raw, nt.mask)
    r_s = S.T @ p_s
    r_t = T.T @ p_t

    ctx = None
    if retain:
        ctx = BlockContext(
            s_ids=ns.ids, t_ids=nt.ids, s_mask=ns.mask, t_mask=nt.mask,
            S=S, T=T, p_s=p_s, p_t=p_t, j_star=j_star, i_star=i_star,
            drop_s=drop_s, drop_t=drop_t, r_s=r_s, r_t=r_t,
        )
    return BlockOutput(
        r_s=r_s, r_t=r_t, a_s=p_s, a_t=p_t,
        alignment=A if keep_alignment else None,
        ctx=ctx,
    )


def backward(
    ctx: BlockContext,
    d_rs: np.ndarray | None = None,
    d_rt: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of one block w.r.t. the embedding rows it touched.

    ``d_rs`` / ``d_rt`` are the loss gradients w.r.t. the block outputs.
    Max-pooling routes gradient only through the argmax entry (lowest index
    on ties).  Returns ``(row_ids, row_grads)`` covering the masked-true
    slots of both sides; padding rows never appear.
    """
    N = ctx.S.shape[0]
    dS = np.zeros_like(ctx.S)
    dT = np.zeros_like(ctx.T)
    dA = np.zeros((N, N))

    if d_rs is not None:
        dS += np.outer(ctx.p_s, d_rs)
        dp = ctx.S @ d_rs
        da = ctx.p_s * (dp - ctx.p_s @ dp)
        rows = np.flatnonzero(ctx.s_mask)
        dA[rows, ctx.j_star[rows]] += da[rows]
    if d_rt is not None:
        dT += np.outer(ctx.p_t, d_rt)
        dp = ctx.T @ d_rt
        da = ctx.p_t * (dp - ctx.p_t @ dp)
        cols = np.flatnonzero(ctx.t_mask)
        dA[ctx.i_star[cols], cols] += da[cols]

    dS += dA @ ctx.T
    dT += dA.T @ ctx.S
    dS *= ctx.drop_s
    dT *= ctx.drop_t

    ids = np.concatenate([ctx.s_ids[ctx.s_mask], ctx.t_ids[ctx.t_mask]])
    grads = np.concatenate([dS[ctx.s_mask], dT[ctx.t_mask]], axis=0)
    return ids, grads


def nce_loss(
    r_s: np.ndarray,
    r_t: np.ndarray,
    r_negs: Sequence[np.ndarray] | np.ndarray,
    weight: float = 1.0,
) -> float:
    """Weighted logistic negative-sampling loss for one edge."""
    if weight <= 0:
        raise ValidationError("edge weight must be > 0")
    r_negs = np.asarray(r_negs, dtype=np.float64).reshape(-1, r_s.shape[0])
    u = _clamp_dots(r_s @ r_t)
    v = _clamp_dots(r_negs @ r_s)
    return float(-weight * (log_sigmoid(u) + log_sigmoid(-v).sum()))


def edge_loss_and_grads(
    emb: GlobalEmbedding,
    ns: NeighborhoodSample,
    nt: NeighborhoodSample,
    neg_samples: Sequence[NeighborhoodSample] | None,
    weight: float = 1.0,
    *,
    neg_nodes: np.ndarray | None = None,
    negative_mode: str = "context",
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and analytic gradients for one edge step (reference path).

    The positive block and every negative block share the s-side message
    matrix (one dropout draw); each negative contributes its own t-side
    block.  In ``negative_mode="global"`` negatives are scored against their
    raw embedding rows instead (``neg_nodes`` required).

    Returns ``(loss, row_ids, row_grads)`` with duplicates unresolved; sum
    rows by id to get the total gradient.
    """
    drop_s = None
    if training and dropout > 0.0:
        if rng is None:
            raise ValidationError("training dropout requires an rng")
        drop_s = _dropout_multiplier((ns.size, emb.dim), dropout, rng)

    pos = forward(
        emb, ns, nt, dropout, training, rng, retain=True, _drop_s=drop_s
    )
    if negative_mode == "context":
        if neg_samples is None:
            raise ValidationError("context negatives need neighborhood samples")
        neg_blocks = [
            forward(emb, ns, nw, dropout, training, rng, retain=True, _drop_s=pos.ctx.drop_s)
            for nw in neg_samples
        ]
        r_negs = np.array([b.r_t for b in neg_blocks])
    elif negative_mode == "global":
        if neg_nodes is None:
            raise ValidationError("global negatives need node ids")
        neg_blocks = []
        r_negs = emb.matrix[np.asarray(neg_nodes, dtype=np.int64)]
    else:
        raise ValidationError(f"unknown negative_mode {negative_mode!r}")

    loss = nce_loss(pos.r_s, pos.r_t, r_negs, weight)
    u = _clamp_dots(pos.r_s @ pos.r_t)
    v = _clamp_dots(r_negs @ pos.r_s) if len(r_negs) else np.zeros(0)
    gu = -weight * sigmoid(-u)
    gv = weight * sigmoid(v)

    d_rs = gu * pos.r_t + (gv[:, None] * r_negs).sum(axis=0)
    d_rt = gu * pos.r_s
    ids_list, grads_list = [], []
    ids, grads = backward(pos.ctx, d_rs, d_rt)
    ids_list.append(ids)
    grads_list.append(grads)
    if negative_mode == "context":
        for k, blk in enumerate(neg_blocks):
            ids, grads = backward(blk.ctx, None, gv[k] * pos.r_s)
            ids_list.append(ids)
            grads_list.append(grads)
    else:
        ids_list.append(np.asarray(neg_nodes, dtype=np.int64))
        grads_list.append(gv[:, None] * pos.r_s[None, :])
    return loss, np.concatenate(ids_list), np.concatenate(grads_list, axis=0)


def exact_softmax_loss(
    emb: GlobalEmbedding,
    g: Graph,
    edge: tuple[int, int, float],
    neighborhoods: dict[int, NeighborhoodSample] | None = None,
) -> float:
    """Edge loss under the fully normalized softmax over all nodes.

    Test-only oracle for tiny graphs: the candidate representation for every
    node w comes from a full mutual-attention block against s's neighborhood,
    and the partition sums ``exp(r_s . r_w)`` over the whole node set.  Uses
    complete (deterministic) neighborhoods unless explicit samples are given.
    """
    s, t, w = int(edge[0]), int(edge[1]), float(edge[2])
    if neighborhoods is None:
        size = int(g.degrees.max())
        dummy = np.random.default_rng(0)  # never consulted: all samples fit
        neighborhoods = {
            u: sample_neighborhood(g, u, size, dummy)
            for u in range(g.n)
            if g.degree(u) > 0
        }
    if s not in neighborhoods:
        raise ValidationError(f"node {s} has no neighborhood")
    pos = forward(emb, neighborhoods[s], neighborhoods[t])
    logits = np.empty(g.n)
    for cand in range(g.n):
        if cand == t:
            logits[cand] = pos.r_s @ pos.r_t
            continue
        if cand not in neighborhoods:
            raise ValidationError(f"node {cand} is isolated; oracle needs full coverage")
        blk = forward(emb, neighborhoods[s], neighborhoods[cand])
        logits[cand] = pos.r_s @ blk.r_t
    return float(-w * (logits[t] - logsumexp(logits)))


@dataclass
class TrainConfig:
    """Training hyperparameters and execution knobs."""

    dim: int = 200
    neighborhood: int = 100
    learning_rate: float = 1e-4
    dropout: float = 0.5
    negatives_per_edge: int = 5
    epochs: int = 100
    seed: int = 0
    variant: str = "goat"            # "goat" | "global" (attention ablation)
    negative_mode: str = "context"   # negatives as attention blocks or raw rows
    resample: str = "epoch"          # redraw neighborhoods every epoch, or fix once
    workers: int = 1                 # edges per synchronous update round
    sync: bool = True                # False: asynchronous lock-free updates
    patience: int = 0                # early-stopping patience in epochs; 0 = off
    precision: str = "float64"       # training arithmetic; checkpoints stay float64

    def validate(self) -> None:
        if self.dim < 1 or self.neighborhood < 1:
            raise ValidationError("dim and neighborhood must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")
        if self.negatives_per_edge < 1:
            raise ValidationError("negatives_per_edge must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if self.negative_mode not in NEGATIVE_MODES:
            raise ValidationError(f"negative_mode must be one of {NEGATIVE_MODES}")
        if self.resample not in RESAMPLE_MODES:
            raise ValidationError(f"resample must be one of {RESAMPLE_MODES}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ValidationError("precision must be float64 or float32")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class _Round:
    """Pre-drawn inputs for one synchronous update round of B edges."""

    s_ids: np.ndarray    # (B, N)
    s_mask: np.ndarray
    t_ids: np.ndarray
    t_mask: np.ndarray
    weights: np.ndarray  # (B,)
    neg_nodes: np.ndarray        # (B, K)
    w_ids: np.ndarray | None     # (B, K, N) for context negatives
    w_mask: np.ndarray | None


def _draw_round(
    g: Graph,
    edges: np.ndarray,
    weights: np.ndarray,
    size: int,
    n_negs: int,
    sampler: NegativeSampler,
    nb_rng: np.random.Generator,
    neg_rng: np.random.Generator,
    negative_mode: str,
    cache: dict[int, NeighborhoodSample] | None,
) -> _Round:
    """Draw neighborhoods and negatives for a batch of edges, in edge order."""
    B = edges.shape[0]
    neg_nodes = sampler.draw(neg_rng, (B, n_negs))

    def take(u: int) -> NeighborhoodSample:
        if cache is not None:
            return cache[u]
        return sample_neighborhood(g, u, size, nb_rng)

    s_ids = np.empty((B, size), dtype=np.int64)
    s_mask = np.zeros((B, size), dtype=bool)
    t_ids = np.empty_like(s_ids)
    t_mask = np.zeros_like(s_mask)
    w_ids = w_mask = None
    if negative_mode == "context":
        w_ids = np.empty((B, n_negs, size), dtype=np.int64)
        w_mask = np.zeros((B, n_negs, size), dtype=bool)
    for b in range(B):
        smp = take(int(edges[b, 0]))
        s_ids[b], s_mask[b] = smp.ids, smp.mask
        smp = take(int(edges[b, 1]))
        t_ids[b], t_mask[b] = smp.ids, smp.mask
        if negative_mode == "context":
            for k in range(n_negs):
                smp = take(int(neg_nodes[b, k]))
                w_ids[b, k], w_mask[b, k] = smp.ids, smp.mask
    return _Round(
        s_ids=s_ids, s_mask=s_mask, t_ids=t_ids, t_mask=t_mask,
        weights=np.asarray(weights, dtype=np.float64),
        neg_nodes=neg_nodes, w_ids=w_ids, w_mask=w_mask,
    )


def _batch_softmax(raw: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return _masked_softmax(raw, mask)


def _scatter_add_rows(dst: np.ndarray, rows: np.ndarray, add: np.ndarray) -> None:
    """dst[rows[i]] += add[i] with repeated rows accumulated.

    Sort + reduceat is much faster than the unbuffered ``np.add.at`` for the
    row counts seen here.
    """
    rows = rows.reshape(-1)
    add = add.reshape(rows.shape[0], -1)
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    starts = np.flatnonzero(
        np.concatenate([[True], sorted_rows[1:] != sorted_rows[:-1]])
    )
    summed = np.add.reduceat(add[order], starts, axis=0)
    dst[sorted_rows[starts]] += summed


def _apply_sgd(E: np.ndarray, ids: np.ndarray, grads: np.ndarray, lr: float) -> None:
    _scatter_add_rows(E, ids, -lr * grads)


def _round_step_goat(
    E: np.ndarray,
    rd: _Round,
    lr: float,
    dropout: float,
    drop_rng: np.random.Generator | None,
    negative_mode: str,
) -> np.ndarray:
    """One synchronous update round: gradients against the current snapshot,
    applied together at the end.  Returns per-edge losses."""
    B, N = rd.s_ids.shape
    d = E.shape[1]
    K = rd.neg_nodes.shape[1]
    context = negative_mode == "context"

    # The t-side message matrix and all negative message matrices are stacked
    # into one tensor V of Q = 1 + K blocks, all sharing the s-side matrix S,
    # so the whole edge step runs as one batched GEMM and one softmax.
    S = E[rd.s_ids]  # (B, N, d)
    if context:
        v_ids = np.concatenate([rd.t_ids[:, None, :], rd.w_ids], axis=1)
        v_mask = np.concatenate([rd.t_mask[:, None, :], rd.w_mask], axis=1)
    else:
        v_ids = rd.t_ids[:, None, :]
        v_mask = rd.t_mask[:, None, :]
    Q, M = v_ids.shape[1], v_ids.shape[2]
    V = E[v_ids]  # (B, Q, M, d)
    mult_s = mult_v = None
    if dropout > 0.0:
        mult_s = _dropout_multiplier(S.shape, dropout, drop_rng, E.dtype)
        mult_v = _dropout_multiplier(V.shape, dropout, drop_rng, E.dtype)
        S = S * mult_s
        V = V * mult_v

    # AV[b, q, m, n] = V[b, q, m] . S[b, n]
    AV = np.matmul(V.reshape(B, Q * M, d), S.transpose(0, 2, 1)).reshape(B, Q, M, N)

    # s-side attention comes from the positive block only (q = 0).
    a0 = np.where(v_mask[:, 0, :, None], AV[:, 0], -np.inf)
    a_s = a0.max(axis=1)       # (B, N): best alignment per s-neighbor
    j_star = a0.argmax(axis=1)
    p_s = _batch_softmax(a_s, rd.s_mask)
    r_s = np.matmul(p_s[:, None, :], S)[:, 0, :]

    # v-side attention for every block: mask invalid s slots in place.
    np.copyto(AV, -np.inf, where=~rd.s_mask[:, None, None, :])
    a_v = AV.max(axis=3)       # (B, Q, M)
    i_star = AV.argmax(axis=3)
    p_v = _batch_softmax(a_v, v_mask)
    r_v = np.matmul(p_v[:, :, None, :], V)[:, :, 0, :]  # (B, Q, d)
    if not context:
        r_v = np.concatenate([r_v, E[rd.neg_nodes]], axis=1)

    # Loss terms are sigma(+/- r_s . r_v_q): q = 0 positive, the rest negative.
    dots = _clamp_dots((r_s[:, None, :] * r_v).sum(axis=2))  # (B, 1+K)
    losses = -rd.weights * (
        log_sigmoid(dots[:, 0]) + log_sigmoid(-dots[:, 1:]).sum(axis=1)
    )

    coef = np.empty_like(dots)  # d(loss)/d(dots)
    coef[:, 0] = -rd.weights * sigmoid(-dots[:, 0])
    coef[:, 1:] = rd.weights[:, None] * sigmoid(dots[:, 1:])
    d_rs = (coef[:, :, None] * r_v).sum(axis=1)        # (B, d)
    d_rv = coef[:, :, None] * r_s[:, None, :]          # (B, 1+K, d)

    # Backward through r_s = S^T p_s and the q = 0 max-pool routing.
    dS = p_s[:, :, None] * d_rs[:, None, :]
    dp_s = np.matmul(S, d_rs[:, :, None])[:, :, 0]
    da_s = p_s * (dp_s - (p_s * dp_s).sum(axis=1, keepdims=True))
    bidx = np.arange(B)[:, None]
    dS += da_s[:, :, None] * V[bidx, 0, j_star]        # dA0[j*, n] * V0_j*

    # Backward through every block's v-side attention.
    d_rv_blocks = d_rv[:, :Q]
    dV = p_v[:, :, :, None] * d_rv_blocks[:, :, None, :]
    dp_v = np.matmul(V, d_rv_blocks[:, :, :, None])[:, :, :, 0]
    da_v = p_v * (dp_v - (p_v * dp_v).sum(axis=2, keepdims=True))
    bqidx = np.arange(B)[:, None, None]
    dV += da_v[:, :, :, None] * S[bqidx, i_star]       # dAV[m, i*] * S_i*
    _scatter_add_rows(dS.reshape(B * N, d), bqidx * N + i_star,
                      da_v[:, :, :, None] * V)
    # Route da_s into block 0 of dV (flat index keeps the reshape a view).
    _scatter_add_rows(dV.reshape(B * Q * M, d), bidx * (Q * M) + j_star,
                      da_s[:, :, None] * S)

    if mult_s is not None:
        dS *= mult_s
        dV *= mult_v
    _apply_sgd(E, rd.s_ids.reshape(-1), dS.reshape(-1, d), lr)
    _apply_sgd(E, v_ids.reshape(-1), dV.reshape(-1, d), lr)
    if not context:
        _apply_sgd(E, rd.neg_nodes.reshape(-1), d_rv[:, Q:].reshape(-1, d), lr)
    return losses


def _round_step_global(
    E: np.ndarray,
    edges: np.ndarray,
    weights: np.ndarray,
    neg_nodes: np.ndarray,
    lr: float,
) -> np.ndarray:
    """Ablation round: representations are the raw embedding rows."""
    s, t = edges[:, 0], edges[:, 1]
    Es, Et, Ew = E[s], E[t], E[neg_nodes]
    u = _clamp_dots((Es * Et).sum(axis=1))
    v = _clamp_dots((Es[:, None, :] * Ew).sum(axis=2))
    losses = -weights * (log_sigmoid(u) + log_sigmoid(-v).sum(axis=1))
    gu = -weights * sigmoid(-u)
    gv = weights[:, None] * sigmoid(v)
    d_s = gu[:, None] * Et + (gv[:, :, None] * Ew).sum(axis=1)
    d_t = gu[:, None] * Es
    d_w = gv[:, :, None] * Es[:, None, :]
    ids = np.concatenate([s, t, neg_nodes.reshape(-1)])
    grads = np.concatenate([d_s, d_t, d_w.reshape(-1, E.shape[1])], axis=0)
    _apply_sgd(E, ids, grads, lr)
    return losses


@dataclass
class TrainResult:
    embedding: GlobalEmbedding
    loss_trace: list[float]
    val_trace: list[float] = field(default_factory=list)
    epochs_run: int = 0
    best_epoch: int | None = None


def _fixed_neighborhoods(
    g: Graph, size: int, rng: np.random.Generator
) -> dict[int, NeighborhoodSample]:
    return {
        u: sample_neighborhood(g, u, size, rng)
        for u in range(g.n)
        if g.degree(u) > 0
    }


def _val_negative_pairs(
    g: Graph, val_edges: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Non-edges (w.r.t. training graph and validation set) for val AUC."""
    forbidden = {(min(int(a), int(b)), max(int(a), int(b))) for a, b in val_edges}
    out = []
    while len(out) < val_edges.shape[0]:
        u, v = (int(x) for x in rng.integers(0, g.n, size=2))
        if u == v or g.has_edge(u, v):
            continue
        key = (min(u, v), max(u, v))
        if key in forbidden:
            continue
        forbidden.add(key)
        out.append((u, v))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def train(
    g: Graph,
    cfg: TrainConfig,
    sampler: NegativeSampler | None = None,
    rng: np.random.Generator | None = None,
    *,
    val_edges: np.ndarray | None = None,
) -> TrainResult:
    """Train the embedding with per-edge SGD at a fixed learning rate.

    Each epoch shuffles the edges and processes them in rounds of
    ``cfg.workers`` edges: gradients inside a round are computed against the
    snapshot at the round start and applied together at the round barrier,
    so ``workers=1`` is plain sequential SGD and any fixed worker count is
    deterministic given the seed.  ``cfg.sync=False`` instead shards edges
    over threads that update rows lock-free (nondeterministic).

    With ``cfg.patience > 0`` and validation edges supplied, training stops
    once the validation AUC has not improved for ``patience`` epochs and the
    best snapshot is returned.
    """
    cfg.validate()
    if g.m < 1:
        raise ValidationError("graph has no edges")
    if sampler is None:
        sampler = build_negative_sampler(g)

    if rng is not None:
        init_rng, shuffle_rng, nb_rng, neg_rng, drop_rng = rng.spawn(5)
        val_rng = rng.spawn(1)[0]
    else:
        init_rng = rng_for(cfg.seed, "init")
        shuffle_rng = rng_for(cfg.seed, "shuffle")
        nb_rng = rng_for(cfg.seed, "neighborhoods")
        neg_rng = rng_for(cfg.seed, "negatives")
        drop_rng = rng_for(cfg.seed, "dropout")
        val_rng = rng_for(cfg.seed, "validation")

    emb = init_embedding(g.n, cfg.dim, init_rng)
    E = emb.matrix
    if cfg.precision == "float32":
        E = E.astype(np.float32)
    cache = None
    if cfg.resample == "fixed" and cfg.variant == "goat":
        cache = _fixed_neighborhoods(g, cfg.neighborhood, nb_rng)

    use_val = val_edges is not None and len(val_edges) > 0 and cfg.patience > 0
    if use_val:
        val_edges = np.asarray(val_edges, dtype=np.int64).reshape(-1, 2)
        val_neg = _val_negative_pairs(g, val_edges, val_rng)
        best_auc, best_E, best_epoch, stall = -np.inf, None, None, 0

    loss_trace: list[float] = []
    val_trace: list[float] = []
    edges, weights = g.edges, g.edge_weights
    epochs_run = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(g.m)
        if cfg.sync:
            total = 0.0
            for start in range(0, g.m, cfg.workers):
                sel = order[start:start + cfg.workers]
                batch_losses = _train_round(
                    g, E, edges[sel], weights[sel], cfg, sampler,
                    nb_rng, neg_rng, drop_rng, cache,
                )
                if not np.all(np.isfinite(batch_losses)):
                    bad = sel[int(np.flatnonzero(~np.isfinite(batch_losses))[0])]
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, edge "
                        f"({edges[bad, 0]}, {edges[bad, 1]})"
                    )
                total += float(batch_losses.sum())
            loss_trace.append(total / g.m)
        else:
            loss_trace.append(
                _async_epoch(g, E, order, cfg, sampler, epoch, cache)
            )
        epochs_run = epoch + 1

        if use_val:
            score_rng = val_rng.spawn(1)[0]
            scores_pos = score_pairs(
                GlobalEmbedding(E), g, val_edges, cfg.neighborhood,
                trials=1, rng=score_rng, variant=cfg.variant,
            )
            scores_neg = score_pairs(
                GlobalEmbedding(E), g, val_neg, cfg.neighborhood,
                trials=1, rng=score_rng, variant=cfg.variant,
            )
            from .evaluation import RankedScores, auc  # local: avoids cycle

            val_auc = auc(RankedScores(pos=scores_pos, neg=scores_neg))
            val_trace.append(val_auc)
            if val_auc > best_auc + 1e-6:
                best_auc, best_E, best_epoch, stall = val_auc, E.copy(), epoch, 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break

    if use_val and best_E is not None:
        E = best_E
    if E.dtype != np.float64:
        E = E.astype(np.float64)
    return TrainResult(
        embedding=GlobalEmbedding(E),
        loss_trace=loss_trace,
        val_trace=val_trace,
        epochs_run=epochs_run,
        best_epoch=best_epoch if use_val else None,
    )


def _train_round(g, E, edges, weights, cfg, sampler, nb_rng, neg_rng, drop_rng, cache):
    if cfg.variant == "global":
        neg_nodes = sampler.draw(neg_rng, (edges.shape[0], cfg.negatives_per_edge))
        return _round_step_global(E, edges, np.asarray(weights, dtype=np.float64),
                                  neg_nodes, cfg.learning_rate)
    rd = _draw_round(
        g, edges, weights, cfg.neighborhood, cfg.negatives_per_edge,
        sampler, nb_rng, neg_rng, cfg.negative_mode, cache,
    )
    return _round_step_goat(
        E, rd, cfg.learning_rate, cfg.dropout,
        drop_rng if cfg.dropout > 0 else None, cfg.negative_mode,
    )


def _async_epoch(g, E, order, cfg, sampler, epoch, cache) -> float:
    """Lock-free epoch: threads process disjoint shards, updating rows in place."""
    from concurrent.futures import ThreadPoolExecutor

    shards = np.array_split(order, cfg.workers)

    def run(shard_idx: int) -> float:
        nb = rng_for(cfg.seed, "neighborhoods", epoch, shard_idx)
        ng = rng_for(cfg.seed, "negatives", epoch, shard_idx)
        dr = rng_for(cfg.seed, "dropout", epoch, shard_idx)
        total = 0.0
        for i in shards[shard_idx]:
            sel = np.array([i])
            losses = _train_round(
                g, E, g.edges[sel], g.edge_weights[sel], cfg, sampler, nb, ng, dr, cache
            )
            total += float(losses.sum())
        return total

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        totals = list(pool.map(run, range(cfg.workers)))
    loss = sum(totals) / g.m
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss at epoch {epoch} (async mode)")
    return loss


def score_pair(
    emb: GlobalEmbedding,
    g: Graph,
    u: int,
    v: int,
    size: int,
    trials: int = 4,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean dot product of the pair's context-sensitive representations.

    Resamples the two neighborhoods ``trials`` times (dropout off).  If either
    node is isolated in ``g``, falls back to the global-embedding dot product.
    """
    if g.degree(u) == 0 or g.degree(v) == 0:
        return float(emb.matrix[u] @ emb.matrix[v])
    if rng is None:
        rng = np.random.default_rng(0)
    total = 0.0
    for _ in range(max(1, trials)):
        blk = forward(emb, sample_neighborhood(g, u, size, rng),
                      sample_neighborhood(g, v, size, rng))
        total += float(blk.r_s @ blk.r_t)
    return total / max(1, trials)


def score_pairs(
    emb: GlobalEmbedding,
    g: Graph,
    pairs: np.ndarray,
    size: int,
    trials: int = 4,
    rng: np.random.Generator | None = None,
    variant: str = "goat",
    chunk: int = 1024,
) -> np.ndarray:
    """Vectorized :func:`score_pair` over many pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    E = emb.matrix
    if variant == "global":
        return np.einsum("bd,bd->b", E[pairs[:, 0]], E[pairs[:, 1]])
    if rng is None:
        rng = np.random.default_rng(0)
    deg = g.degrees
    scores = np.zeros(pairs.shape[0])
    fall = (deg[pairs[:, 0]] == 0) | (deg[pairs[:, 1]] == 0)
    if fall.any():
        fp = pairs[fall]
        scores[fall] = np.einsum("bd,bd->b", E[fp[:, 0]], E[fp[:, 1]])
    active = np.flatnonzero(~fall)
    trials = max(1, trials)
    for start in range(0, active.shape[0], chunk):
        idx = active[start:start + chunk]
        B = idx.shape[0]
        acc = np.zeros(B)
        for _ in range(trials):
            s_ids = np.empty((B, size), dtype=np.int64)
            s_mask = np.zeros((B, size), dtype=bool)
            t_ids = np.empty_like(s_ids)
            t_mask = np.zeros_like(s_mask)
            for b, p in enumerate(idx):
                smp = sample_neighborhood(g, int(pairs[p, 0]), size, rng)
                s_ids[b], s_mask[b] = smp.ids, smp.mask
                smp = sample_neighborhood(g, int(pairs[p, 1]), size, rng)
                t_ids[b], t_mask[b] = smp.ids, smp.mask
            acc += _attention_pair_scores(E, s_ids, s_mask, t_ids, t_mask)
        scores[idx] = acc / trials
    return scores


def _attention_pair_scores(E, s_ids, s_mask, t_ids, t_mask) -> np.ndarray:
    """Batched forward returning only r_s . r_t per pair (no dropout)."""
    S = E[s_ids]
    T = E[t_ids]
    A = np.matmul(S, T.transpose(0, 2, 1))
    am = np.where(t_mask[:, None, :], A, -np.inf)
    p_s = _batch_softmax(am.max(axis=2), s_mask)
    am2 = np.where(s_mask[:, :, None], A, -np.inf)
    p_t = _batch_softmax(am2.max(axis=1), t_mask)
    r_s = (p_s[:, :, None] * S).sum(axis=1)
    r_t = (p_t[:, :, None] * T).sum(axis=1)
    return (r_s * r_t).sum(axis=1)


CHECKPOINT_MAGIC = b"CEMB"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ32s")


def save_checkpoint(
    path: str | Path,
    emb: GlobalEmbedding,
    cfg: TrainConfig,
    digest: str,
    extra: dict | None = None,
) -> None:
    """Binary checkpoint (header + row-major float64 matrix) + JSON sidecar."""
    path = Path(path)
    raw_digest = bytes.fromhex(digest)
    if len(raw_digest) != 32:
        raise ValidationError("digest must be a 64-char hex sha256")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, emb.n, emb.dim, cfg.seed, raw_digest
        ))
        fh.write(np.ascontiguousarray(emb.matrix, dtype=np.float64).tobytes())
    sidecar = {"config": cfg.to_dict(), "digest": digest}
    if extra:
        sidecar.update(extra)
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> tuple[GlobalEmbedding, dict]:
    """Read a checkpoint; returns the embedding and merged header/sidecar meta."""
    path = Path(path)
    blob = path.read_bytes()
    magic, version, n, dim, seed, raw_digest = _HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    matrix = np.frombuffer(blob, dtype=np.float64, offset=_HEADER.size).copy()
    matrix = matrix.reshape(n + 1, dim)
    meta = {"n": n, "dim": dim, "seed": seed, "digest": raw_digest.hex()}
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        meta.update(json.loads(sidecar.read_text(encoding="utf-8")))
    return GlobalEmbedding(matrix), meta
