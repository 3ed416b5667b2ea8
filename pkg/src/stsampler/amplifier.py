"""Saliency-guided spatial amplification.

Each selected frame gets a saliency map (channel self-attention followed
by a learned channel aggregation), the map is reduced to per-axis
marginals, the marginal CDFs are inverted at uniformly spaced targets,
and the resulting separable grid resamples the frame so salient regions
cover more output pixels.

Coordinate conventions (these make uniform saliency an exact identity
warp, which the tests pin down):

* CDF knots sit at pixel edges 0..L; the continuous CDF is piecewise
  linear between knots.
* Inversion targets are output pixel centers (j + 0.5) / W'.
* Inverted edge-space coordinates are shifted by -0.5 into pixel-center
  space, landing in [-0.5, L - 0.5].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .graphops import tile_cols

POSITIVITY_FLOOR = 0.05  # fraction of the value range added after min-shift


@dataclass
class MarginalCDF:
    """Normalized axis density and its edge-knot CDF (both on the tape)."""

    density: tc.Tensor   # (L,) strictly positive, sums to 1
    cdf: tc.Tensor       # (L+1,) knots, cdf[0] = 0, cdf[L] = 1


@dataclass
class SamplingGrid:
    """Separable source coordinates in pixel-center convention."""

    xs: tc.Tensor        # (W',) column coordinates
    ys: tc.Tensor        # (H',) row coordinates

    def coords(self) -> np.ndarray:
        """Dense (H',W',2) array of (x, y) pairs."""
        xs = self.xs.data
        ys = self.ys.data
        grid = np.empty((ys.size, xs.size, 2), dtype=np.float64)
        grid[:, :, 0] = xs[None, :]
        grid[:, :, 1] = ys[:, None]
        return grid


@dataclass
class AmplifyResult:
    frames: tc.Tensor     # (T, C_in, H', W') amplified frames
    saliency: tc.Tensor   # (T, H, W) normalized saliency maps
    xs: tc.Tensor         # (T, W') grid column coordinates
    ys: tc.Tensor         # (T, H') grid row coordinates


# -- batched internals --------------------------------------------------------

def _attention_batch(flat: tc.Tensor) -> tc.Tensor:
    """Channel self-attention on (B,C,hw): Gram-weighted channel mixing."""
    hw = flat.shape[2]
    flat_t = tc.swapaxes(flat, 1, 2)
    alpha = tc.bmm(flat, flat_t) * float(1.0 / np.sqrt(hw))
    return tc.bmm(alpha, flat)


def _saliency_batch(att: tc.Tensor, w_s: tc.Tensor, hw_shape, frame_hw) -> tc.Tensor:
    """Aggregate attended channels with w_s, upsample, enforce positivity."""
    b, c, hw = att.shape
    h, w = hw_shape
    fh, fw = frame_hw
    att_t = tc.reshape(tc.swapaxes(att, 1, 2), (b * hw, c))
    raw = tc.matmul(att_t, tc.reshape(w_s, (c, 1))) * (1.0 / c)
    raw = tc.reshape(raw, (b, 1, h, w))
    up = tc.bilinear_resize(raw, fh, fw)
    sal = tc.reshape(up, (b, fh, fw))
    return _positivity_batch(sal)


def _positivity_batch(sal: tc.Tensor) -> tc.Tensor:
    """Min-shift plus a floor of 0.05 * range; constant maps become all ones."""
    b, fh, fw = sal.shape
    lo = sal.min(axes=(1, 2))
    hi = sal.max(axes=(1, 2))
    span = hi - lo
    lo_map = tc.reshape(tile_cols(tc.reshape(lo, (b, 1)), fh * fw), (b, fh, fw))
    span_map = tc.reshape(tile_cols(tc.reshape(span, (b, 1)), fh * fw), (b, fh, fw))
    out = sal - lo_map + span_map * POSITIVITY_FLOOR
    degenerate = span.data == 0
    if np.any(degenerate):
        bump = np.zeros(sal.shape, dtype=sal.dtype)
        bump[degenerate] = 1.0
        out = out + tc.Tensor(bump)
    return out


def _density_cdf_batch(marg: tc.Tensor):
    """Rows of (B,L) positive marginals -> (densities, edge-knot CDFs)."""
    b, length = marg.shape
    total = tc.reshape(marg.sum(axes=1), (b, 1))
    dens = marg / tile_cols(total, length)
    knots = tc.concat([tc.Tensor(np.zeros((b, 1), dtype=marg.dtype)),
                       tc.cumsum(dens, axis=1)], axis=1)
    return dens, knots


def _invert_batch(dens: tc.Tensor, knots: tc.Tensor, out_size: int) -> tc.Tensor:
    """Piecewise-linear CDF inversion at output pixel centers.

    Returns (B, out_size) pixel-center source coordinates, strictly
    increasing along each row for positive densities.
    """
    b, length = dens.shape
    u = (np.arange(out_size, dtype=np.float64) + 0.5) / out_size
    seg = np.empty((b, out_size), dtype=np.int64)
    for row in range(b):
        seg[row] = np.searchsorted(knots.data[row], u, side="right") - 1
    seg = np.clip(seg, 0, length - 1)
    rows = np.repeat(np.arange(b), out_size)
    knot_g = tc.reshape(tc.take(tc.reshape(knots, (b * (length + 1),)),
                                rows * (length + 1) + seg.ravel()), (b, out_size))
    dens_g = tc.reshape(tc.take(tc.reshape(dens, (b * length,)),
                                rows * length + seg.ravel()), (b, out_size))
    u_c = tc.Tensor(np.broadcast_to(u, (b, out_size)).astype(dens.dtype))
    seg_c = tc.Tensor(seg.astype(dens.dtype))
    return seg_c + (u_c - knot_g) / dens_g - 0.5


# -- public single-frame operations -------------------------------------------

def channel_attention(features: tc.Tensor) -> tc.Tensor:
    """Self-attention over channels of one (C,h,w) feature map."""
    if features.ndim != 3:
        raise tc.ShapeError(f"channel_attention: expected (C,h,w), got {tuple(features.shape)}")
    c, h, w = features.shape
    flat = tc.reshape(features, (1, c, h * w))
    return tc.reshape(_attention_batch(flat), (c, h, w))


def saliency(features_att: tc.Tensor, w_s: tc.Tensor, frame_hw) -> tc.Tensor:
    """Saliency map (H,W) from attended features (C,h,w) and unit w_s (C,)."""
    if features_att.ndim != 3:
        raise tc.ShapeError(f"saliency: expected (C,h,w), got {tuple(features_att.shape)}")
    c, h, w = features_att.shape
    if w_s.size != c:
        raise tc.ShapeError(f"saliency: w_s has {w_s.size} entries, features have {c} channels")
    flat = tc.reshape(features_att, (1, c, h * w))
    out = _saliency_batch(flat, w_s, (h, w), frame_hw)
    return tc.reshape(out, frame_hw)


def axis_marginals(sal_map: tc.Tensor):
    """Column-max profile (length W) and row-max profile (length H)."""
    if sal_map.ndim != 2:
        raise tc.ShapeError(f"axis_marginals: expected (H,W), got {tuple(sal_map.shape)}")
    mx = sal_map.max(axes=0)   # max over rows -> per column
    my = sal_map.max(axes=1)   # max over columns -> per row
    return mx, my


def build_cdf(marginal: tc.Tensor) -> MarginalCDF:
    """Normalize a strictly positive marginal and lay its CDF on pixel edges."""
    if marginal.ndim != 1:
        raise tc.ShapeError(f"build_cdf: expected 1-D marginal, got {tuple(marginal.shape)}")
    if np.any(marginal.data <= 0):
        raise ValueError("build_cdf: marginal must be strictly positive")
    length = marginal.shape[0]
    dens, knots = _density_cdf_batch(tc.reshape(marginal, (1, length)))
    return MarginalCDF(density=tc.reshape(dens, (length,)),
                       cdf=tc.reshape(knots, (length + 1,)))


def invert_and_grid(dx: MarginalCDF, dy: MarginalCDF, out_hw) -> SamplingGrid:
    """Separable sampling grid from the two axis CDFs."""
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise tc.ShapeError(f"invert_and_grid: output dims must be >= 1, got {out_hw}")
    wx = dx.density.shape[0]
    wy = dy.density.shape[0]
    xs = _invert_batch(tc.reshape(dx.density, (1, wx)), tc.reshape(dx.cdf, (1, wx + 1)), ow)
    ys = _invert_batch(tc.reshape(dy.density, (1, wy)), tc.reshape(dy.cdf, (1, wy + 1)), oh)
    return SamplingGrid(xs=tc.reshape(xs, (ow,)), ys=tc.reshape(ys, (oh,)))


def warp_frame(frame: tc.Tensor, grid: SamplingGrid) -> tc.Tensor:
    """Bilinear resampling of one (C,H,W) frame on a SamplingGrid."""
    if frame.ndim != 3:
        raise tc.ShapeError(f"warp_frame: expected (C,H,W), got {tuple(frame.shape)}")
    c, h, w = frame.shape
    out = tc.warp(tc.reshape(frame, (1, c, h, w)),
                  tc.reshape(grid.ys, (1, grid.ys.size)),
                  tc.reshape(grid.xs, (1, grid.xs.size)))
    return tc.reshape(out, (c, grid.ys.size, grid.xs.size))


def amplify(frames: tc.Tensor, scan_features: tc.Tensor, w_s: tc.Tensor,
            out_hw) -> AmplifyResult:
    """Full amplification of a stack of selected frames.

    frames: (T, C_in, H, W) at original resolution; scan_features:
    (T, C, h, w) from the scan net for the same frames; w_s: (C,) unit
    aggregation weights.  Output frames are (T, C_in, out_h, out_w).
    """
    if frames.ndim != 4 or scan_features.ndim != 4:
        raise tc.ShapeError("amplify: frames and scan_features must be 4-D")
    if frames.shape[0] != scan_features.shape[0]:
        raise tc.ShapeError(f"amplify: {frames.shape[0]} frames but "
                            f"{scan_features.shape[0]} feature maps")
    t, c_in, fh, fw = frames.shape
    _, c, h, w = scan_features.shape
    oh, ow = out_hw
    flat = tc.reshape(scan_features, (t, c, h * w))
    att = _attention_batch(flat)
    sal = _saliency_batch(att, w_s, (h, w), (fh, fw))       # (T, fh, fw)
    mx = sal.max(axes=1)                                     # (T, fw)
    my = sal.max(axes=2)                                     # (T, fh)
    dens_x, knots_x = _density_cdf_batch(mx)
    dens_y, knots_y = _density_cdf_batch(my)
    xs = _invert_batch(dens_x, knots_x, ow)
    ys = _invert_batch(dens_y, knots_y, oh)
    warped = tc.warp(frames, ys, xs)
    return AmplifyResult(frames=warped, saliency=sal, xs=xs, ys=ys)
