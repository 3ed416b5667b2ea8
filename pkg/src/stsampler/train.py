"""Episodic training, evaluation and sampler-quality metrics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data as dataset
from . import selector
from . import tensor as tc
from .config import RunConfig
from .io_formats import read_checkpoint, write_checkpoint
from .model import SamplerModel, episode_arrays, run_episode


class TrainingDiverged(RuntimeError):
    pass


class SGD:
    """Momentum SGD with a global gradient-norm clip.

    The clip guards against the occasional large gradient coming through
    the amplifier's CDF inversion (its coordinate gradient carries a
    1/density factor); one unclipped spike can dead-end training.
    """

    def __init__(self, named_params, momentum: float, clip: float = 5.0):
        self.named_params = named_params
        self.momentum = momentum
        self.clip = clip
        self.velocity = {name: np.zeros_like(t.data) for name, t in named_params}

    def zero_grad(self):
        for _, t in self.named_params:
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for _, t in self.named_params:
            if t.grad is not None:
                total += float((t.grad.astype(np.float64) ** 2).sum())
        return float(np.sqrt(total))

    def step(self, lr: float):
        scale = 1.0
        if self.clip > 0:
            norm = self.grad_norm()
            if norm > self.clip:
                scale = self.clip / norm
        for name, t in self.named_params:
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad * scale
            t.data -= (lr * v).astype(t.dtype)


def lr_schedule(epoch: int, lr0: float, decay: float, decay_every: int) -> float:
    return lr0 * decay ** (epoch // decay_every)


def train(cfg: RunConfig, seed: int, out_dir: str, log_hook=None):
    """Full episodic training run; writes checkpoint.ckpt and metrics.csv.

    Returns (model, checkpoint_path).  The epoch log is
    "epoch,loss,acc,sigma,lr" with per-epoch means.
    """
    os.makedirs(out_dir, exist_ok=True)
    by_split = dataset.load_manifest(cfg["data.dir"])
    records = by_split["train"]
    cache = dataset.VideoCache()
    for rec in records:
        cache.get(rec)

    model = SamplerModel(cfg, seed=seed)
    opt = SGD(model.named_params(), momentum=cfg["train.momentum"], clip=cfg["train.clip"])
    rng = np.random.default_rng([seed, 17])
    epochs = cfg["train.epochs"]
    episodes = cfg["train.episodes"]
    n_way, k_shot, n_query = cfg["train.n_way"], cfg["train.k_shot"], cfg["train.n_query"]

    log_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")
    with open(log_path, "w", encoding="ascii") as log:
        log.write("epoch,loss,acc,sigma,lr\n")
        for epoch in range(epochs):
            sigma = selector.sigma_schedule(
                epoch, epochs, sigma0=cfg["selector.sigma0"],
                decay_every=cfg["selector.decay_every"],
                decay_factor=cfg["selector.decay_factor"],
                zero_frac=cfg["selector.zero_frac"])
            lr = lr_schedule(epoch, cfg["train.lr"], cfg["train.lr_decay"],
                             cfg["train.lr_decay_every"])
            losses, accs = [], []
            for _ in range(episodes):
                episode = dataset.sample_episode(records, n_way, k_shot, n_query, rng)
                videos, labels = episode_arrays(episode, cache)
                opt.zero_grad()
                with tc.record() as rec_tape:
                    out = run_episode(model, videos, labels, n_way,
                                      n_support=n_way * k_shot,
                                      train=True, sigma=sigma, rng=rng)
                    loss_val = out.loss.item()
                    if not np.isfinite(loss_val):
                        raise TrainingDiverged(
                            f"loss is not finite at epoch {epoch}: {loss_val}")
                    rec_tape.backward(out.loss)
                opt.step(lr)
                losses.append(loss_val)
                accs.append(out.accuracy)
            row = (epoch, float(np.mean(losses)), float(np.mean(accs)), sigma, lr)
            log.write("%d,%.6f,%.4f,%.6f,%.6f\n" % row)
            log.flush()
            if log_hook is not None:
                log_hook(*row)
    write_checkpoint(ckpt_path, cfg, model.sections())
    return model, ckpt_path


def overfit_single_episode(cfg: RunConfig, seed: int, steps: int = 200):
    """Sanity loop on one fixed episode; returns accuracy trace."""
    by_split = dataset.load_manifest(cfg["data.dir"])
    cache = dataset.VideoCache()
    rng = np.random.default_rng([seed, 23])
    episode = dataset.sample_episode(by_split["train"], cfg["train.n_way"],
                                     cfg["train.k_shot"], cfg["train.n_query"], rng)
    videos, labels = episode_arrays(episode, cache)
    model = SamplerModel(cfg, seed=seed)
    opt = SGD(model.named_params(), momentum=cfg["train.momentum"], clip=cfg["train.clip"])
    trace = []
    for _ in range(steps):
        opt.zero_grad()
        with tc.record() as rec_tape:
            out = run_episode(model, videos, labels, cfg["train.n_way"],
                              n_support=cfg["train.n_way"] * cfg["train.k_shot"],
                              train=True, sigma=cfg["selector.sigma0"], rng=rng)
            rec_tape.backward(out.loss)
        opt.step(cfg["train.lr"])
        trace.append(out.accuracy)
    return trace


def load_model(ckpt_path: str, dtype=np.float32):
    """Rebuild a model from a checkpoint (its config echo wins)."""
    cfg, sections = read_checkpoint(ckpt_path)
    model = SamplerModel(cfg, seed=0, dtype=dtype)
    model.load_sections(sections)
    return model, cfg


def _eval_threads() -> int:
    raw = os.environ.get("SAMPLER_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n else min(4, os.cpu_count() or 1)


def evaluate(model: SamplerModel, records, episodes: int, seed: int,
             collect=False):
    """Mean query accuracy with a 95% normal-approximation CI.

    Hard selection, mean task summary.  Episodes run on worker threads
    (capped by SAMPLER_THREADS); episode i always uses the rng stream
    (seed, i), so results do not depend on thread count.
    Returns (mean, ci95, per_episode array[, outputs if collect]).
    """
    cfg = model.cfg
    cache = dataset.VideoCache()
    for rec in records:
        cache.get(rec)
    n_way, k_shot, n_query = cfg["train.n_way"], cfg["train.k_shot"], cfg["train.n_query"]

    def one(i):
        rng = np.random.default_rng([seed, i])
        episode = dataset.sample_episode(records, n_way, k_shot, n_query, rng)
        videos, labels = episode_arrays(episode, cache)
        out = run_episode(model, videos, labels, n_way, n_support=n_way * k_shot,
                          train=False, sigma=0.0, rng=None, collect=collect)
        return episode, out

    results = [None] * episodes
    with ThreadPoolExecutor(max_workers=_eval_threads()) as pool:
        for i, res in enumerate(pool.map(one, range(episodes))):
            results[i] = res
    per_episode = np.array([out.accuracy for _, out in results])
    mean = float(per_episode.mean())
    ci = float(1.96 * per_episode.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    if collect:
        return mean, ci, per_episode, results
    return mean, ci, per_episode


def sampler_metrics(model: SamplerModel, records, episodes: int, seed: int):
    """Selection recall ratio and saliency mass ratio against ground truth.

    recall ratio (per video, then averaged): the fraction of selected
    frames that are event frames, divided by the chance fraction
    |event| / M.  1.0 means no better than uniform chance.

    saliency mass ratio (selected event frames only): saliency mass inside
    the event box over the box's area fraction; 1.0 is uniform saliency.
    """
    cfg = model.cfg
    m = cfg["data.frames"]
    t_sel = cfg["selector.T"]
    _, _, _, results = evaluate(model, records, episodes, seed, collect=True)
    recalls, mass_ratios = [], []
    for episode, out in results:
        recs = [r for r, _ in episode.support + episode.query]
        for v, rec in enumerate(recs):
            event = set(rec.event_frames)
            sel = out.selected[v]
            hit = sum(1 for f in sel if f in event)
            recalls.append((hit / t_sel) / (len(event) / m))
            if out.saliency is None:
                continue
            y0, x0, y1, x1 = rec.event_box
            for col, f in enumerate(sel):
                if f not in event:
                    continue
                sal = out.saliency[v, col]
                total = float(sal.sum())
                inside = float(sal[y0:y1, x0:x1].sum())
                area_frac = ((y1 - y0) * (x1 - x0)) / (sal.shape[0] * sal.shape[1])
                mass_ratios.append((inside / total) / area_frac)
    recall_ratio = float(np.mean(recalls))
    mass_ratio = float(np.mean(mass_ratios)) if mass_ratios else float("nan")
    return recall_ratio, mass_ratio
