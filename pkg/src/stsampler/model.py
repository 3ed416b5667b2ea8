"""Full model assembly and the per-episode forward pass.

Two variants share all capacity:

* sampler: task-adapted scoring, smoothed top-k selection and
  saliency-guided amplification;
* uniform baseline: fixed uniform-stride frame selection and a plain
  resize instead of the warp (identity spatial sampling).

The episode forward builds one tape covering every video in the episode;
heavy ops (scan convs, backbone, amplification, warping) run batched
across videos.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import amplifier, head, scan, selector
from . import tensor as tc
from .adapter import TaskAdapter
from .config import RunConfig
from .graphops import he_normal


def uniform_stride_indices(m: int, t: int) -> np.ndarray:
    """Evenly spaced frame indices (the conventional center-of-bin picks)."""
    return np.floor((np.arange(t) + 0.5) * m / t).astype(np.int64)


class SamplerModel:
    """All trainable components plus the episode-level wiring."""

    def __init__(self, cfg: RunConfig, seed: int, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.baseline = cfg["train.baseline"]
        c_in = cfg["data.channels"]
        c = cfg["scan.channels"]
        rngs = [np.random.default_rng([seed, 100 + i]) for i in range(5)]
        self.scan_net = scan.ScanNet(c_in, c, rngs[0], dtype=dtype)
        self.selector = selector.TemporalSelector(c, cfg["selector.d"], rngs[1], dtype=dtype)
        self.adapter = TaskAdapter(c, cfg["adapter.dt"], cfg["selector.d"], rngs[2], dtype=dtype)
        self.backbone = head.Backbone(c_in, cfg["head.D"], rngs[3], dtype=dtype)
        self.w_r = tc.Tensor(
            he_normal(rngs[4], (cfg["head.D"] + c, cfg["head.Dout"]),
                      fan_in=cfg["head.D"] + c, dtype=dtype),
            requires_grad=True)

    def sections(self):
        """Named parameter sections, the checkpoint layout."""
        return {
            "scan_net": self.scan_net.params(),
            "selector": self.selector.params(),
            "task_encoder": [(n, t) for n, t in self.adapter.params()
                             if n.startswith("enc_")],
            "gen_t": [("w", self.adapter.gen_t)],
            "gen_s": [("w", self.adapter.gen_s)],
            "backbone": self.backbone.params(),
            "w_r": [("w", self.w_r)],
        }

    def named_params(self):
        out = []
        for sec, items in self.sections().items():
            for name, t in items:
                out.append((f"{sec}/{name}", t))
        return out

    def load_sections(self, arrays):
        """Install checkpoint arrays; any disagreement is a shape mismatch."""
        own = self.sections()
        for sec, items in own.items():
            if sec not in arrays:
                raise tc.ShapeError(f"shape mismatch: checkpoint missing section {sec}")
            stored = dict(arrays[sec])
            for name, t in items:
                if name not in stored:
                    raise tc.ShapeError(f"shape mismatch: missing {sec}/{name}")
                arr = stored[name]
                if tuple(arr.shape) != tuple(t.shape):
                    raise tc.ShapeError(
                        f"shape mismatch: {sec}/{name} is {tuple(arr.shape)} "
                        f"in checkpoint, model expects {tuple(t.shape)}")
                t.data = arr.astype(t.dtype)


@dataclass
class EpisodeOutput:
    loss: tc.Tensor | None
    probs: np.ndarray             # (NQ, N) fused-path query probabilities
    labels: np.ndarray            # (NQ,) true local labels
    accuracy: float
    selected: np.ndarray          # (V, T) per-video column-wise frame indices
    saliency: np.ndarray | None   # (V, T, H, W) normalized saliency maps
    amplified: np.ndarray | None  # (V, T, C_in, side, side) model inputs
    w2: np.ndarray | None = None
    w_s: np.ndarray | None = None
    score_rows: np.ndarray | None = None    # (V, M) frame scores
    noises: list = field(default_factory=list)
    sel_matrices: list = field(default_factory=list)  # (M, T) arrays, collect only


def run_episode(model: SamplerModel, videos, labels, n_way: int, n_support: int,
                *, train: bool, sigma: float, rng: np.random.Generator | None,
                frozen_selections=None, collect: bool = False) -> EpisodeOutput:
    """Forward (and loss) for one episode.

    videos: list of (M,C_in,H,W) float arrays, support entries first;
    labels: local class ids per video.  train=True keeps the smoothed
    selection and samples the task summary; otherwise selection is hard
    and the summary collapses to its mean.  frozen_selections (a list of
    (M,T) arrays) replaces the scoring/selection stage with constants;
    gradient checks use it because a fixed-noise Monte-Carlo top-k is
    piecewise constant in its scores, and the score edge is validated by
    the dedicated estimator checks instead.
    """
    cfg = model.cfg
    v_count = len(videos)
    m = cfg["data.frames"]
    t_sel = cfg["selector.T"]
    side = cfg["head.side"]
    scan_side = cfg["scan.side"]
    dtype = model.dtype

    frames_all = tc.Tensor(np.concatenate(videos, axis=0).astype(dtype))  # (V*M,C,H,W)
    small = scan.downscale(frames_all, scan_side)
    feats_all = model.scan_net.extract_features(small)                    # (V*M,C,h,w)

    per_video_feats = [tc.take(feats_all, range(i * m, (i + 1) * m)) for i in range(v_count)]
    per_video_frames = [tc.take(frames_all, range(i * m, (i + 1) * m)) for i in range(v_count)]
    globals_ = [scan.global_feature(f) for f in per_video_feats]

    w2 = w_s = None
    if not model.baseline:
        summary = model.adapter.encode_task(globals_[:n_support])
        f_t = model.adapter.sample_summary(summary, rng, train)
        gen = model.adapter.generate(f_t)
        w2, w_s = gen.theta_ts, gen.theta_sa

    selections = []
    selected_idx = np.empty((v_count, t_sel), dtype=np.int64)
    collect_scores = collect and not model.baseline and frozen_selections is None
    score_rows = np.empty((v_count, m), dtype=np.float64) if collect_scores else None
    noises = []
    if frozen_selections is not None:
        for i in range(v_count):
            sel = tc.Tensor(np.asarray(frozen_selections[i]).astype(dtype))
            selections.append(sel)
            selected_idx[i] = np.argmax(sel.data, axis=0)
    elif model.baseline:
        idx = uniform_stride_indices(m, t_sel)
        hard = np.zeros((m, t_sel), dtype=dtype)
        hard[idx, np.arange(t_sel)] = 1.0
        for i in range(v_count):
            selections.append(tc.Tensor(hard.copy()))
            selected_idx[i] = idx
    else:
        for i in range(v_count):
            scores = model.selector.evaluate_scores(per_video_feats[i], globals_[i], w2)
            if collect_scores:
                score_rows[i] = scores.data.astype(np.float64)
            if train and sigma > 0:
                sel, noise = selector.perturbed_topk(scores, t_sel, sigma,
                                                     cfg["selector.n"], rng)
                noises.append(noise)
            else:
                sel = tc.Tensor(selector.hard_topk(scores, t_sel).astype(dtype))
            selections.append(sel)
            selected_idx[i] = np.argmax(sel.data, axis=0)

    sel_frames = tc.concat([selector.select(s, f)
                            for s, f in zip(selections, per_video_frames)], axis=0)
    sel_feats = tc.concat([selector.select(s, f)
                           for s, f in zip(selections, per_video_feats)], axis=0)

    saliency_np = None
    if model.baseline:
        warped = tc.bilinear_resize(sel_frames, side, side)
    else:
        amp = amplifier.amplify(sel_frames, sel_feats, w_s, (side, side))
        warped = amp.frames
        if collect:
            saliency_np = amp.saliency.data.reshape(v_count, t_sel,
                                                    amp.saliency.shape[1],
                                                    amp.saliency.shape[2]).copy()

    bb_feats = model.backbone.features(warped)             # (V*T, D)
    scan_vecs = sel_feats.mean(axes=(2, 3))                # (V*T, C)
    fused_all = head.fuse(bb_feats, scan_vecs, model.w_r)  # (V*T, Dout)

    def rows(i):
        return range(i * t_sel, (i + 1) * t_sel)

    fused = [tc.take(fused_all, rows(i)) for i in range(v_count)]
    scans = [tc.take(scan_vecs, rows(i)) for i in range(v_count)]

    support_lab = list(labels[:n_support])
    query_lab = np.asarray(labels[n_support:], dtype=np.int64)
    loss, probs = head.episode_loss(
        fused[n_support:], scans[n_support:], query_lab,
        fused[:n_support], scans[:n_support], support_lab, n_way)
    acc = float(np.mean(np.argmax(probs, axis=1) == query_lab))

    return EpisodeOutput(
        loss=loss, probs=probs, labels=query_lab, accuracy=acc,
        selected=selected_idx, saliency=saliency_np,
        amplified=warped.data.reshape(v_count, t_sel, *warped.shape[1:]).copy()
        if collect else None,
        w2=None if w2 is None else w2.data.copy(),
        w_s=None if w_s is None else w_s.data.copy(),
        score_rows=score_rows, noises=noises,
        sel_matrices=[s.data.copy() for s in selections] if collect else [])


def episode_arrays(episode, cache):
    """Materialize an Episode into (videos, labels) for run_episode."""
    videos, labels = [], []
    for rec, lab in episode.support + episode.query:
        videos.append(cache.get(rec))
        labels.append(lab)
    return videos, labels
