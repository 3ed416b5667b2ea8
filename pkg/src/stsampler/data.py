"""Synthetic video benchmark with verifiable ground truth.

Each class is a distinct small motif (oriented bar / blob / corner with a
class-specific orientation and texture frequency) moving along a
class-specific direction.  The motif appears only during a contiguous
event window of a few frames inside a noisy video; the other frames carry
background noise and class-agnostic distractor crosses.  Because motif
intensities sit strictly above everything else and layers compose by
maximum, the motif pixels are exactly recoverable: regenerating a video
with the pattern stream disabled and diffing isolates them - the audit
the tests use.

Ground truth (event frame set and event bounding box) is recorded in
manifest.txt: one line per video,
"<id> <class> <split> <f1,f2,...> <y0,x0,y1,x1>"  (box is half-open).
Frames are stored one video per file in the TNSR container.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .config import RunConfig
from .kernels import numpy_backend as _npk  # backend-independent generation

PATTERN_LO = 0.55
PATTERN_HI = 0.95
DISTRACTOR_LEVEL = 0.45
BACKGROUND_HI = 0.20

# rng sub-stream tags; keeping them separate makes the pattern ablation
# leave background/distractors/layout untouched
_S_BACKGROUND, _S_DISTRACT, _S_PATTERN, _S_LAYOUT = 0, 1, 2, 3


@dataclass
class VideoRecord:
    vid: str
    class_id: int
    split: str
    event_frames: list
    event_box: tuple      # (y0, x0, y1, x1), half-open
    path: str


@dataclass
class Episode:
    support: list         # (VideoRecord, local label)
    query: list           # (VideoRecord, local label)
    classes: list         # global class ids, index = local label


def split_sizes(n_classes: int):
    """Train/val/test class counts; val and test take ~20% each."""
    held = max(1, round(0.2 * n_classes))
    train = n_classes - 2 * held
    if train < 1:
        raise ValueError(f"too few classes to split: {n_classes}")
    return train, held, held


def class_split(class_id: int, n_classes: int) -> str:
    tr, va, _ = split_sizes(n_classes)
    if class_id < tr:
        return "train"
    if class_id < tr + va:
        return "val"
    return "test"


def motif_params(class_id: int, n_classes: int):
    """Deterministic, well-spread motif family parameters for a class."""
    kind = ("bar", "blob", "corner")[class_id % 3]
    angle = np.pi * ((class_id * 7) % n_classes) / n_classes
    freq = 1.0 + (class_id // 3) % 3
    move_dir = 2 * np.pi * ((class_id * 3) % n_classes) / n_classes
    return kind, angle, freq, move_dir


def render_motif(kind: str, angle: float, freq: float, size: int) -> np.ndarray:
    """A (size,size) patch: zero outside the motif, [0.55, 0.95] inside."""
    half = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xx - half) * np.cos(angle) + (yy - half) * np.sin(angle)
    v = -(xx - half) * np.sin(angle) + (yy - half) * np.cos(angle)
    grating = 0.75 + 0.2 * np.sin(2 * np.pi * freq * u / size)
    if kind == "bar":
        mask = (np.abs(v) < size / 6.0) & (np.abs(u) < half * 0.95)
    elif kind == "blob":
        r = np.sqrt(u ** 2 + (1.6 * v) ** 2)
        mask = r < half * 0.9
        grating = 0.75 + 0.2 * np.cos(2 * np.pi * freq * r / half)
    else:  # corner: two arms meeting at the patch center
        arm = size / 6.0
        mask = ((np.abs(v) < arm) & (u >= 0) & (u < half * 0.95)) | \
               ((np.abs(u) < arm) & (v >= 0) & (v < half * 0.95))
    out = np.where(mask, np.clip(grating, PATTERN_LO, PATTERN_HI), 0.0)
    return out


def _distractor_patch(size: int) -> np.ndarray:
    """Class-agnostic cross drawn in non-event frames."""
    patch = np.zeros((size, size))
    arm = max(1, size // 5)
    mid = size // 2
    patch[mid - arm // 2:mid + arm // 2 + 1, :] = DISTRACTOR_LEVEL
    patch[:, mid - arm // 2:mid + arm // 2 + 1] = DISTRACTOR_LEVEL
    return patch


def _stamp(frame: np.ndarray, patch: np.ndarray, top: int, left: int):
    """Max-compose a patch into a frame at (top, left), clipped to bounds."""
    side = frame.shape[0]
    p = patch.shape[0]
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + p, side), min(left + p, side)
    if y0 >= y1 or x0 >= x1:
        return
    sub = patch[y0 - top:y1 - top, x0 - left:x1 - left]
    np.maximum(frame[y0:y1, x0:x1], sub, out=frame[y0:y1, x0:x1])


def generate_video(cfg: RunConfig, seed: int, class_id: int, video_idx: int,
                   with_pattern: bool = True):
    """One synthetic video plus its ground truth.

    Returns (frames (M,C,side,side) float32 in [0,1], event_frames list,
    event_box (y0,x0,y1,x1) half-open).  With with_pattern=False the
    motif stream is skipped and the rest of the video is unchanged.
    """
    m = cfg["data.frames"]
    side = cfg["data.side"]
    channels = cfg["data.channels"]
    psize = cfg["data.pattern_size"]
    n_classes = cfg["data.classes"]

    rng_bg = np.random.default_rng([seed, class_id, video_idx, _S_BACKGROUND])
    rng_di = np.random.default_rng([seed, class_id, video_idx, _S_DISTRACT])
    rng_la = np.random.default_rng([seed, class_id, video_idx, _S_LAYOUT])

    # layout: event window and trajectory
    ev_len = int(rng_la.integers(cfg["data.event_min"], cfg["data.event_max"] + 1))
    ev_start = int(rng_la.integers(0, m - ev_len + 1))
    event_frames = list(range(ev_start, ev_start + ev_len))
    kind, angle, freq, move_dir = motif_params(class_id, n_classes)
    speed = 1.0 + rng_la.uniform(0.0, 1.0)
    start_y = rng_la.uniform(0, side - psize)
    start_x = rng_la.uniform(0, side - psize)

    # background: coarse blobs + fine noise, capped below the distractor level
    coarse = rng_bg.uniform(0.05, BACKGROUND_HI - 0.05, size=(m, 6, 6)).astype(np.float32)
    gray = _npk.resize_forward(coarse[:, None], side, side)[:, 0]
    gray = np.minimum(gray + rng_bg.uniform(0, 0.05, size=gray.shape).astype(np.float32),
                      BACKGROUND_HI).astype(np.float64)

    # distractors on non-event frames
    cross = _distractor_patch(psize)
    for f in range(m):
        if f in event_frames:
            continue
        for _ in range(int(rng_di.integers(1, 3))):
            top = int(rng_di.integers(0, side - psize + 1))
            left = int(rng_di.integers(0, side - psize + 1))
            _stamp(gray[f], cross, top, left)

    # class pattern along its trajectory
    box = None
    if with_pattern:
        motif = render_motif(kind, angle, freq, psize)
        pattern_mask = np.zeros((side, side), dtype=bool)
        dy, dx = speed * np.sin(move_dir), speed * np.cos(move_dir)
        for step, f in enumerate(event_frames):
            top = int(round(np.clip(start_y + step * dy, 0, side - psize)))
            left = int(round(np.clip(start_x + step * dx, 0, side - psize)))
            _stamp(gray[f], motif, top, left)
            pattern_mask[top:top + psize, left:left + psize] |= motif > 0
        ys, xs = np.nonzero(pattern_mask)
        box = (int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1)

    frames = np.repeat(gray[:, None, :, :], channels, axis=1).astype(np.float32)
    return frames, event_frames, box


def generate_dataset(cfg: RunConfig, seed: int, out_dir: str, force: bool = False):
    """Write the full dataset (manifest + one TNSR file per video)."""
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise FileExistsError(f"output directory {out_dir} is not empty (use force)")
    os.makedirs(out_dir, exist_ok=True)
    n_classes = cfg["data.classes"]
    per_class = cfg["data.per_class"]
    records = []
    for class_id in range(n_classes):
        split = class_split(class_id, n_classes)
        for idx in range(per_class):
            frames, event_frames, box = generate_video(cfg, seed, class_id, idx)
            vid = f"c{class_id:02d}v{idx:03d}"
            path = os.path.join(out_dir, vid + ".tnsr")
            with open(path, "wb") as fh:
                tc.write_tnsr(fh, frames)
            records.append(VideoRecord(vid=vid, class_id=class_id, split=split,
                                       event_frames=event_frames, event_box=box,
                                       path=path))
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="ascii") as fh:
        for r in records:
            ev = ",".join(str(f) for f in r.event_frames)
            bx = ",".join(str(v) for v in r.event_box)
            fh.write(f"{r.vid} {r.class_id} {r.split} {ev} {bx}\n")
    return records


def load_manifest(data_dir: str):
    """Records grouped by split: {"train": [...], "val": [...], "test": [...]}."""
    path = os.path.join(data_dir, "manifest.txt")
    by_split = {"train": [], "val": [], "test": []}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            vid, cls, split, ev, bx = line.split()
            rec = VideoRecord(
                vid=vid, class_id=int(cls), split=split,
                event_frames=[int(v) for v in ev.split(",")],
                event_box=tuple(int(v) for v in bx.split(",")),
                path=os.path.join(data_dir, vid + ".tnsr"))
            by_split[split].append(rec)
    return by_split


def load_video(record: VideoRecord) -> np.ndarray:
    with open(record.path, "rb") as fh:
        return tc.read_tnsr(fh)


class VideoCache:
    """Loads each video file once."""

    def __init__(self):
        self._cache = {}

    def get(self, record: VideoRecord) -> np.ndarray:
        if record.vid not in self._cache:
            self._cache[record.vid] = load_video(record)
        return self._cache[record.vid]


def sample_episode(records, n_way: int, k_shot: int, n_query: int,
                   rng: np.random.Generator) -> Episode:
    """Draw an N-way K-shot episode with disjoint support/query videos."""
    by_class = {}
    for r in records:
        by_class.setdefault(r.class_id, []).append(r)
    eligible = sorted(c for c, rs in by_class.items() if len(rs) >= k_shot + n_query)
    if len(eligible) < n_way:
        raise ValueError(f"sample_episode: need {n_way} classes with >= "
                         f"{k_shot + n_query} samples, found {len(eligible)}")
    classes = [eligible[i] for i in rng.choice(len(eligible), size=n_way, replace=False)]
    support, query = [], []
    for local, cls in enumerate(classes):
        pool = by_class[cls]
        picks = rng.choice(len(pool), size=k_shot + n_query, replace=False)
        for j in picks[:k_shot]:
            support.append((pool[j], local))
        for j in picks[k_shot:]:
            query.append((pool[j], local))
    return Episode(support=support, query=query, classes=classes)
