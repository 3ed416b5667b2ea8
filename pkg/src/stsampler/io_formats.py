"""File formats: checkpoints (named TNSR sections) and PGM/PPM images.

Checkpoint layout (binary, ASCII header lines):

    CKPT v1
    config <n>
    <key=value>             x n
    sections <m>
    section <name> <k>      then k of:
    param <pname>
    <TNSR v1 blob>
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .config import RunConfig, parse_config_text


def write_checkpoint(path: str, cfg: RunConfig, sections: dict):
    """sections: {name: [(param_name, Tensor-or-array), ...]}."""
    lines = cfg.echo_lines()
    with open(path, "wb") as fh:
        fh.write(b"CKPT v1\n")
        fh.write(f"config {len(lines)}\n".encode("ascii"))
        for line in lines:
            fh.write((line + "\n").encode("ascii"))
        fh.write(f"sections {len(sections)}\n".encode("ascii"))
        for name, items in sections.items():
            fh.write(f"section {name} {len(items)}\n".encode("ascii"))
            for pname, t in items:
                arr = t.data if isinstance(t, tc.Tensor) else np.asarray(t)
                fh.write(f"param {pname}\n".encode("ascii"))
                tc.write_tnsr(fh, arr)


def _read_line(fh) -> str:
    buf = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("checkpoint: truncated header")
        if ch == b"\n":
            return buf.decode("ascii")
        buf.extend(ch)


def read_checkpoint(path: str):
    """Returns (RunConfig, {section: [(param_name, float32 array), ...]})."""
    with open(path, "rb") as fh:
        if _read_line(fh) != "CKPT v1":
            raise ValueError("checkpoint: bad magic")
        tag, n = _read_line(fh).split()
        if tag != "config":
            raise ValueError("checkpoint: expected config block")
        cfg_text = "\n".join(_read_line(fh) for _ in range(int(n)))
        cfg = parse_config_text(cfg_text)
        tag, m = _read_line(fh).split()
        if tag != "sections":
            raise ValueError("checkpoint: expected sections block")
        sections = {}
        for _ in range(int(m)):
            tag, name, k = _read_line(fh).split()
            if tag != "section":
                raise ValueError("checkpoint: expected section header")
            items = []
            for _ in range(int(k)):
                tag, pname = _read_line(fh).split(maxsplit=1)
                if tag != "param":
                    raise ValueError("checkpoint: expected param header")
                items.append((pname, tc.read_tnsr(fh)))
            sections[name] = items
    return cfg, sections


def to_uint8(arr: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Min-max scale to 0..255 (constant arrays map to 0)."""
    a = np.asarray(arr, dtype=np.float64)
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.uint8)
    scaled = (a - lo) / (hi - lo)
    return np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str, img: np.ndarray):
    """Binary P5 image from a (H,W) uint8 array."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError(f"write_pgm: expected (H,W), got {img.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ppm(path: str, img: np.ndarray):
    """Binary P6 image from a (H,W,3) uint8 array."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"write_ppm: expected (H,W,3), got {img.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pnm(path: str) -> np.ndarray:
    """Read back a binary PGM/PPM written by this module."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        w, h = (int(v) for v in fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError("read_pnm: only maxval 255 supported")
        if magic == b"P5":
            return np.frombuffer(fh.read(w * h), dtype=np.uint8).reshape(h, w)
        if magic == b"P6":
            return np.frombuffer(fh.read(w * h * 3), dtype=np.uint8).reshape(h, w, 3)
    raise ValueError(f"read_pnm: unsupported magic {magic!r}")
