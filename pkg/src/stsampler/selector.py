"""Temporal frame selection.

Frames are scored by a small task-conditioned scorer, then the top-T are
taken: exactly at evaluation time, and through a Monte-Carlo smoothed
relaxation during training.  The smoothing averages hard top-k decisions
under Gaussian perturbations of the scores; its score gradient is the
matching Monte-Carlo estimator evaluated on the same noise draws (common
random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as tc
from .graphops import he_normal


def positional_embedding(i: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of index i: [sin, cos] pairs over geometric rates."""
    out = np.empty(dim, dtype=np.float64)
    k = np.arange(0, dim, 2)
    rate = i / np.power(10000.0, k / dim)
    out[0::2] = np.sin(rate)
    out[1::2] = np.cos(rate)[: out[1::2].size]
    return out


def pe_table(m: int, dim: int, dtype=np.float32) -> np.ndarray:
    return np.stack([positional_embedding(i, dim) for i in range(m)]).astype(dtype)


class TemporalSelector:
    """Scores frames and owns the shared (non task-generated) scorer weights."""

    def __init__(self, feat_channels: int, d: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.feat_channels = feat_channels
        self.d = d
        self.dtype = dtype
        # concatenating the frame feature with the video-level feature
        # doubles the channel count, hence 2C rows
        self.w1 = tc.Tensor(he_normal(rng, (2 * feat_channels, d), fan_in=2 * feat_channels,
                                      dtype=dtype), requires_grad=True)
        self._pe_cache = {}

    def params(self):
        return [("w1", self.w1)]

    def _pe(self, m: int) -> tc.Tensor:
        if m not in self._pe_cache:
            self._pe_cache[m] = tc.Tensor(pe_table(m, 2 * self.feat_channels, self.dtype))
        return self._pe_cache[m]

    def evaluate_scores(self, features: tc.Tensor, global_feat: tc.Tensor,
                        w2: tc.Tensor, use_pe: bool = True) -> tc.Tensor:
        """Importance scores in [0,1] for the M frames of one video.

        features: (M,C,h,w); global_feat: (C,h,w); w2: (d,1) task-generated.
        Raw scores are min-max normalized over the video; an all-equal
        video maps to 0.5 everywhere.
        """
        if features.ndim != 4 or features.shape[0] < 1:
            raise tc.ShapeError(f"evaluate_scores: expected (M,C,h,w) with M >= 1, "
                                f"got {tuple(features.shape)}")
        m, c = features.shape[0], features.shape[1]
        if 2 * c != self.w1.shape[0]:
            raise tc.ShapeError(f"evaluate_scores: features have {c} channels, "
                                f"w1 expects {self.w1.shape[0] // 2}")
        g = tc.reshape(global_feat, (1, c, features.shape[2], features.shape[3]))
        g_rep = tc.concat([g] * m, axis=0)
        cat = tc.concat([features, g_rep], axis=1)          # M x 2C x h x w
        pooled = cat.mean(axes=(2, 3))                       # M x 2C
        if use_pe:
            pooled = pooled + self._pe(m)
        hidden = tc.relu(tc.matmul(pooled, self.w1))         # M x d
        raw = tc.reshape(tc.matmul(hidden, w2), (m,))        # M
        return minmax_normalize(raw)


def minmax_normalize(raw: tc.Tensor) -> tc.Tensor:
    """(raw - min) / (max - min); collapses to 0.5 when max == min."""
    lo = raw.min()
    hi = raw.max()
    if hi.item() == lo.item():
        return tc.Tensor(np.full(raw.shape, 0.5, dtype=raw.dtype))
    return (raw - lo) / (hi - lo)


def hard_topk(scores, t: int) -> np.ndarray:
    """One-hot (M,t) selection of the t best scores.

    Ties break toward the lower frame index; columns follow ascending
    frame order, so hard selection preserves temporal order.
    """
    vals = scores.data if isinstance(scores, tc.Tensor) else np.asarray(scores)
    m = vals.shape[0]
    if not 1 <= t <= m:
        raise tc.ShapeError(f"hard_topk: need 1 <= t <= {m}, got t={t}")
    order = np.argsort(-vals, kind="stable")[:t]
    picked = np.sort(order)
    out = np.zeros((m, t), dtype=np.float32)
    out[picked, np.arange(t)] = 1.0
    return out


def selected_indices(selection: np.ndarray) -> np.ndarray:
    """Frame index chosen by each column of a hard selection matrix."""
    return np.argmax(selection, axis=0)


@dataclass
class PerturbedNoise:
    """Noise draws retained by the smoothed top-k forward for its backward."""

    z: np.ndarray        # (n, M) standard normal
    idx: np.ndarray      # (n, t) sorted selected indices per draw
    sigma: float
    n: int


def perturbed_topk(scores: tc.Tensor, t: int, sigma: float, n: int,
                   rng: np.random.Generator):
    """Smoothed top-k: mean of hard selections under score perturbations.

    Returns (selection matrix (M,t), PerturbedNoise or None).  sigma = 0
    reproduces hard_topk exactly and carries no gradient (the noise slot
    is None); sigma > 0 tapes the Monte-Carlo score gradient.
    """
    if sigma < 0:
        raise ValueError(f"perturbed_topk: sigma must be >= 0, got {sigma}")
    if n < 1:
        raise ValueError(f"perturbed_topk: n must be >= 1, got {n}")
    m = scores.shape[0]
    if not 1 <= t <= m:
        raise tc.ShapeError(f"perturbed_topk: need 1 <= t <= {m}, got t={t}")
    if sigma == 0.0:
        return tc.Tensor(hard_topk(scores, t).astype(scores.dtype)), None
    z = rng.standard_normal((n, m))
    mean, idx = kernels.topk_sample(scores.data.astype(np.float64), z, sigma, t)
    noise = PerturbedNoise(z=z, idx=idx, sigma=float(sigma), n=n)

    def vjp(g):
        return (perturbed_topk_backward(g, noise).astype(scores.dtype),)

    out = tc.custom("perturbed_topk", (scores,), mean.astype(scores.dtype), vjp)
    return out, noise


def perturbed_topk_backward(upstream: np.ndarray, noise: PerturbedNoise) -> np.ndarray:
    """Score gradient: (1/(n sigma)) sum_k <I_k, upstream> z_k."""
    if noise is None or noise.sigma <= 0:
        raise ValueError("perturbed_topk_backward: requires sigma > 0 "
                         "(zero-temperature selection is evaluation-only)")
    return kernels.topk_backward(noise.idx, noise.z, noise.sigma,
                                 np.asarray(upstream, dtype=np.float64))


def select(selection: tc.Tensor, stack: tc.Tensor) -> tc.Tensor:
    """Apply an (M,t) selection to an (M,...) stack: out[j] = sum_m sel[m,j] stack[m]."""
    if selection.ndim != 2:
        raise tc.ShapeError(f"select: selection must be 2-D, got {tuple(selection.shape)}")
    if stack.shape[0] != selection.shape[0]:
        raise tc.ShapeError(f"select: stack leading dim {stack.shape[0]} != "
                            f"selection rows {selection.shape[0]}")
    m, t = selection.shape
    flat = tc.reshape(stack, (m, int(np.prod(stack.shape[1:]))))
    picked = tc.matmul(tc.transpose(selection), flat)
    return tc.reshape(picked, (t,) + tuple(stack.shape[1:]))


def sigma_schedule(epoch: int, total_epochs: int, sigma0: float = 0.1,
                   decay_every: int = 40, decay_factor: float = 0.8,
                   zero_frac: float = 0.05) -> float:
    """Geometric temperature decay that snaps to exactly 0 near the end.

    The snap makes late training use the same hard selection as
    evaluation; the decay keeps earlier epochs smooth.
    """
    if epoch < 0:
        raise ValueError(f"sigma_schedule: epoch must be >= 0, got {epoch}")
    if total_epochs > 0 and epoch >= total_epochs * (1.0 - zero_frac):
        return 0.0
    return sigma0 * decay_factor ** (epoch // decay_every)
