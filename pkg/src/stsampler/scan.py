"""Dense low-resolution video scanning.

A small conv net runs over every frame of the downscaled video and the
per-frame feature maps are averaged into a single video-level map that
drives selection, saliency and task encoding.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .graphops import he_normal


def downscale(video: tc.Tensor, side: int) -> tc.Tensor:
    """Bilinear resize of every frame (M,C,H,W) to side x side."""
    if side < 8:
        raise tc.ShapeError(f"downscale: side must be >= 8, got {side}")
    if video.ndim != 4:
        raise tc.ShapeError(f"downscale: expected (M,C,H,W), got {tuple(video.shape)}")
    if video.shape[2] == side and video.shape[3] == side:
        return video
    return tc.bilinear_resize(video, side, side)


class ScanNet:
    """Three stride-2 conv blocks: C_in -> 16 -> 32 -> C, ReLU after each."""

    def __init__(self, in_channels: int, feat_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.in_channels = in_channels
        self.feat_channels = feat_channels
        chans = [in_channels, 16, 32, feat_channels]
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

    def extract_features(self, video: tc.Tensor) -> tc.Tensor:
        """Per-frame feature maps (M,C,h,w) from a downscaled video."""
        if video.ndim != 4:
            raise tc.ShapeError(f"extract_features: expected (M,C,H,W), got {tuple(video.shape)}")
        if video.shape[1] != self.in_channels:
            raise tc.ShapeError(
                f"extract_features: video has {video.shape[1]} channels, "
                f"net expects {self.in_channels}")
        h = video
        for w, b in zip(self.weights, self.biases):
            h = tc.relu(tc.conv2d(h, w, b, stride=2, pad=1))
        return h


def global_feature(features: tc.Tensor) -> tc.Tensor:
    """Mean of the M frame feature maps; shape (C,h,w)."""
    if features.ndim != 4 or features.shape[0] < 1:
        raise tc.ShapeError(f"global_feature: expected (M,C,h,w) with M >= 1, "
                            f"got {tuple(features.shape)}")
    return features.mean(axes=0)
