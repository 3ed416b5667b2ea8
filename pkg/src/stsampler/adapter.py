"""Task-conditioned parameter generation.

The support set's video-level features are encoded into Gaussian summary
statistics, a task summary vector is drawn with the reparameterization
trick, and two bias-free generators map it to the selector's scoring
vector w2 and the amplifier's aggregation vector w_s.  Both are L2
normalized before installation, which makes installation invariant to
positive rescaling of the summary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .graphops import he_normal, linear

SIGMA_FLOOR = 1e-4


@dataclass
class TaskSummary:
    mu: tc.Tensor      # (dt,)
    sigma: tc.Tensor   # (dt,) strictly positive


@dataclass
class GeneratedParams:
    theta_ts: tc.Tensor  # (d,1) unit norm, selector w2
    theta_sa: tc.Tensor  # (C,) unit norm, amplifier w_s


class TaskAdapter:
    """Support-set encoder plus the two parameter generators."""

    def __init__(self, feat_channels: int, dt: int, selector_d: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.dt = dt
        hidden = 2 * dt
        self.enc_w1 = tc.Tensor(he_normal(rng, (feat_channels, hidden), fan_in=feat_channels,
                                          dtype=dtype), requires_grad=True)
        self.enc_b1 = tc.Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.enc_w2 = tc.Tensor(he_normal(rng, (hidden, 2 * dt), fan_in=hidden,
                                          dtype=dtype), requires_grad=True)
        self.enc_b2 = tc.Tensor(np.zeros(2 * dt, dtype=dtype), requires_grad=True)
        # bias-free generators
        self.gen_t = tc.Tensor(he_normal(rng, (dt, selector_d), fan_in=dt, dtype=dtype),
                               requires_grad=True)
        self.gen_s = tc.Tensor(he_normal(rng, (dt, feat_channels), fan_in=dt, dtype=dtype),
                               requires_grad=True)

    def params(self):
        return [("enc_w1", self.enc_w1), ("enc_b1", self.enc_b1),
                ("enc_w2", self.enc_w2), ("enc_b2", self.enc_b2),
                ("gen_t", self.gen_t), ("gen_s", self.gen_s)]

    def encode_task(self, support_globals) -> TaskSummary:
        """Gaussian summary statistics of a task.

        support_globals: list of (C,h,w) video-level features (one per
        support sample).  Each is pooled to a C-vector, encoded to
        (mu_i, raw_sigma_i), and the per-sample encodings are averaged;
        sigma = softplus(mean raw) + floor keeps the scale positive.
        """
        if not support_globals:
            raise tc.ShapeError("encode_task: empty support set")
        pooled = tc.concat([tc.reshape(g.mean(axes=(1, 2)), (1, g.shape[0]))
                            for g in support_globals], axis=0)       # (NK, C)
        hidden = tc.relu(linear(pooled, self.enc_w1, self.enc_b1))
        stats = linear(hidden, self.enc_w2, self.enc_b2)              # (NK, 2dt)
        mean_stats = stats.mean(axes=0)                               # (2dt,)
        halves = tc.reshape(mean_stats, (2, self.dt))
        mu = tc.reshape(tc.take(halves, [0]), (self.dt,))
        raw = tc.reshape(tc.take(halves, [1]), (self.dt,))
        sigma = tc.softplus(raw) + SIGMA_FLOOR
        return TaskSummary(mu=mu, sigma=sigma)

    def sample_summary(self, summary: TaskSummary, rng: np.random.Generator | None,
                       train: bool) -> tc.Tensor:
        """f_t = mu + sigma * eps while training; f_t = mu at evaluation."""
        if not train:
            return summary.mu
        if rng is None:
            raise ValueError("sample_summary: training mode needs an rng")
        eps = tc.Tensor(rng.standard_normal(self.dt).astype(summary.mu.dtype))
        return summary.mu + summary.sigma * eps

    def generate(self, f_t: tc.Tensor) -> GeneratedParams:
        """Unit-normalized task parameters for the selector and amplifier."""
        theta_ts = tc.matmul(tc.reshape(f_t, (1, self.dt)), self.gen_t)  # (1,d)
        theta_sa = tc.matmul(tc.reshape(f_t, (1, self.dt)), self.gen_s)  # (1,C)
        ts_norm = tc.l2norm(theta_ts)
        sa_norm = tc.l2norm(theta_sa)
        if ts_norm.item() < 1e-8 or sa_norm.item() < 1e-8:
            raise ValueError("generate: degenerate generator produced a zero-norm parameter")
        w2 = tc.transpose(theta_ts / ts_norm)                 # (d,1)
        w_s = tc.reshape(theta_sa / sa_norm, (theta_sa.shape[1],))
        return GeneratedParams(theta_ts=w2, theta_sa=w_s)
