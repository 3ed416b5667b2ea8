"""Recognition head: backbone, feature fusion and prototype classification.

Sampled frames pass through a small conv backbone; per-frame backbone
vectors are fused (concat + linear) with the pooled scan features of the
same frames.  Class prototypes are support means, queries are scored by
frame-wise cosine distance, and the loss is cross-entropy on the fused
path plus an auxiliary cross-entropy on the raw scan path.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .graphops import he_normal

NORM_GUARD = 1e-8


class Backbone:
    """Four stride-2 conv blocks (C_in -> 16 -> 32 -> 64 -> D) + global pool.

    The final block has no ReLU: signed, roughly zero-mean features keep
    the cosine metric spread out (all-positive vectors cluster near
    cosine 1, which flattens the classification loss).
    """

    def __init__(self, in_channels: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        chans = [in_channels, 16, 32, 64, out_dim]
        self.out_dim = out_dim
        self.weights = []
        self.biases = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            w = he_normal(rng, (cout, cin, 3, 3), fan_in=cin * 9, dtype=dtype)
            self.weights.append(tc.Tensor(w, requires_grad=True))
            self.biases.append(tc.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True))

    def params(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"conv{i}.w", w))
            out.append((f"conv{i}.b", b))
        return out

    def features(self, frames: tc.Tensor) -> tc.Tensor:
        """(T,C_in,H,W) frames -> (T,D) pooled feature vectors."""
        h = frames
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = tc.conv2d(h, w, b, stride=2, pad=1)
            if i != last:
                h = tc.relu(h)
        return h.mean(axes=(2, 3))


def fuse(backbone_feats: tc.Tensor, scan_feats: tc.Tensor, w_r: tc.Tensor) -> tc.Tensor:
    """Per-frame concat of backbone (T,D) and scan (T,C) vectors through w_r."""
    if backbone_feats.shape[0] != scan_feats.shape[0]:
        raise tc.ShapeError(f"fuse: {backbone_feats.shape[0]} backbone rows vs "
                            f"{scan_feats.shape[0]} scan rows")
    cat = tc.concat([backbone_feats, scan_feats], axis=1)
    if cat.shape[1] != w_r.shape[0]:
        raise tc.ShapeError(f"fuse: concat dim {cat.shape[1]} != w_r rows {w_r.shape[0]}")
    return tc.matmul(cat, w_r)


def prototypes(support_feats, labels, n_way: int):
    """Per-class mean of support features.

    support_feats: list of (T,Dout) tensors; labels: matching class ids in
    [0, n_way).  Returns a list of (T,Dout) prototypes indexed by class.
    """
    protos = []
    for c in range(n_way):
        members = [f for f, y in zip(support_feats, labels) if y == c]
        if not members:
            raise tc.ShapeError(f"prototypes: class {c} has no support samples")
        acc = members[0]
        for f in members[1:]:
            acc = acc + f
        protos.append(acc * (1.0 / len(members)))
    return protos


def frame_cosine_distance(q: tc.Tensor, p: tc.Tensor) -> tc.Tensor:
    """Sum over frames of (1 - cosine similarity); scalar in [0, 2T]."""
    if q.shape != p.shape:
        raise tc.ShapeError(f"frame_cosine_distance: shapes {tuple(q.shape)} "
                            f"and {tuple(p.shape)} differ")
    dot = (q * p).sum(axes=1)                                   # (T,)
    qn = tc.sqrt((q * q).sum(axes=1)) + NORM_GUARD
    pn = tc.sqrt((p * p).sum(axes=1)) + NORM_GUARD
    cos = dot / (qn * pn)
    return (cos * -1.0 + 1.0).sum()


def classify(q: tc.Tensor, protos) -> tc.Tensor:
    """Softmax over negative frame-wise cosine distances; (N,) probabilities."""
    if len(protos) < 2:
        raise tc.ShapeError("classify: need at least 2 prototypes")
    dists = tc.concat([tc.reshape(frame_cosine_distance(q, p), (1,)) for p in protos],
                      axis=0)
    return tc.softmax(dists * -1.0, axis=0)


def cross_entropy(probs: tc.Tensor, label: int) -> tc.Tensor:
    """-log P(true class); probs are already normalized."""
    picked = tc.take(tc.reshape(probs, (probs.size,)), [label])
    return tc.reshape(-tc.log(picked), ())


def _batched_path_loss(queries, protos, labels):
    """Summed cross-entropy for one path, all queries against all prototypes.

    Same math as classify/cross_entropy per query, restructured so each
    prototype is scored against every query frame in one pass.
    Returns (loss scalar, probability rows (NQ,N)).
    """
    nq = len(queries)
    t = queries[0].shape[0]
    q_all = tc.concat(queries, axis=0)                        # (NQ*T, D)
    qn = tc.sqrt((q_all * q_all).sum(axes=1)) + NORM_GUARD    # (NQ*T,)
    cols = []
    for p in protos:
        p_tiled = tc.concat([p] * nq, axis=0)                 # (NQ*T, D)
        dot = (q_all * p_tiled).sum(axes=1)
        pn = tc.sqrt((p_tiled * p_tiled).sum(axes=1)) + NORM_GUARD
        cos = dot / (qn * pn)
        per_frame = tc.reshape(cos * -1.0 + 1.0, (nq, t))
        cols.append(tc.reshape(per_frame.sum(axes=1), (nq, 1)))
    dists = tc.concat(cols, axis=1)                           # (NQ, N)
    probs = tc.softmax(dists * -1.0, axis=1)
    flat = tc.reshape(probs, (nq * len(protos),))
    picked = tc.take(flat, np.asarray(labels) + np.arange(nq) * len(protos))
    loss = -(tc.log(picked).sum())
    return loss, probs.data.copy()


def episode_loss(query_fused, query_scan, query_labels,
                 support_fused, support_scan, support_labels, n_way: int):
    """Cross-entropy on the fused path plus the auxiliary scan-path loss.

    Both paths share the prototype / cosine / softmax / cross-entropy
    pipeline; the auxiliary path runs on selector-weighted scan features
    without fusion.  Losses are summed over the episode's queries.
    Returns (loss, fused-path probability rows as an (NQ,N) array).
    """
    protos_main = prototypes(support_fused, support_labels, n_way)
    protos_aux = prototypes(support_scan, support_labels, n_way)
    main_loss, probs = _batched_path_loss(query_fused, protos_main, query_labels)
    aux_loss, _ = _batched_path_loss(query_scan, protos_aux, query_labels)
    return main_loss + aux_loss, probs
