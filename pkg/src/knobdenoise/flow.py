"""Dense motion between a target frame and its temporal neighbors.

Flow is estimated with pyramidal Lucas-Kanade on luma at a quarter of the
input resolution, then upscaled. Flow fields follow the backward-warp
convention ``aligned(x) = neighbor(x + flow(x))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, ShapeError
from .media import Clip, Frame
from .pyramid import build_gaussian_pyramid, max_levels, resample

LK_LEVELS = 3
LK_WINDOW = 7
LK_ITERATIONS = 3
LK_REG = 1e-4
FLOW_SCALE_LEVELS = 2  # two halvings -> quarter resolution
MIN_FLOW_SIZE = 32

# neighbor slot order
OFFSETS = (-2, -1, 1, 2)


@dataclass(frozen=True, eq=False)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape))

    def to_raw(self) -> bytes:
        """Two little-endian float32 planes, u then v."""
        return np.stack([self.u, self.v]).astype("<f4").tobytes()


@dataclass(frozen=True, eq=False)
class AlignedSet:
    target: Frame
    neighbors: tuple        # 4 warped frames, order t-2, t-1, t+1, t+2
    masks: tuple            # 4 binary planes
    flows: tuple            # 4 FlowFields
    duplicated: tuple       # 4 bools, True where the slot is a target copy

    @property
    def frames(self) -> tuple:
        """Target first, then the four aligned neighbors."""
        return (self.target,) + tuple(self.neighbors)


def _gradients(p: np.ndarray):
    gy, gx = np.gradient(p)
    return gx, gy


def _lk_level(tgt: np.ndarray, nb: np.ndarray, u: np.ndarray, v: np.ndarray, iterations: int):
    """Gauss-Newton Lucas-Kanade where every pixel's window is warped by that pixel's flow.

    Window taps falling outside the target or sampling the neighbor out of bounds
    are dropped from the normal equations.
    """
    r = LK_WINDOW // 2
    h, w = tgt.shape
    gx, gy = _gradients(tgt)
    pad = lambda a, val: np.pad(a, r, mode="constant", constant_values=val)
    tgt_p, gx_p, gy_p, inside_p = pad(tgt, 0.0), pad(gx, 0.0), pad(gy, 0.0), pad(np.ones((h, w)), 0.0)
    taps = []
    for oy in range(-r, r + 1):
        for ox in range(-r, r + 1):
            sl = (slice(r + oy, r + oy + h), slice(r + ox, r + ox + w))
            taps.append((ox, oy, tgt_p[sl], gx_p[sl], gy_p[sl], inside_p[sl]))
    for _ in range(iterations):
        a11 = np.full((h, w), LK_REG)
        a22 = np.full((h, w), LK_REG)
        a12 = np.zeros((h, w))
        b1 = np.zeros((h, w))
        b2 = np.zeros((h, w))
        for ox, oy, tq, gxq, gyq, inside in taps:
            sampled, valid = sample_bilinear(nb, u + ox, v + oy)
            wgt = inside * valid
            e = wgt * (sampled - tq)
            wgx = wgt * gxq
            wgy = wgt * gyq
            a11 += wgx * gxq
            a22 += wgy * gyq
            a12 += wgx * gyq
            b1 += gxq * e
            b2 += gyq * e
        det = a11 * a22 - a12 * a12
        u = u - (a22 * b1 - a12 * b2) / det
        v = v - (a11 * b2 - a12 * b1) / det
    return u, v


def _lk_pyramidal(tgt: np.ndarray, nb: np.ndarray):
    levels = max(1, min(LK_LEVELS, max_levels(tgt.shape)))
    pt = build_gaussian_pyramid(tgt, levels)
    pn = build_gaussian_pyramid(nb, levels)
    u = np.zeros(pt[-1].shape)
    v = np.zeros(pt[-1].shape)
    for k in range(levels - 1, -1, -1):
        if u.shape != pt[k].shape:
            u = 2.0 * resample(u, pt[k].shape, 0.5)
            v = 2.0 * resample(v, pt[k].shape, 0.5)
        u, v = _lk_level(pt[k], pn[k], u, v, LK_ITERATIONS)
    return u, v


def estimate_flow(target: Frame, neighbor: Frame) -> FlowField:
    if target.shape != neighbor.shape:
        raise ShapeError(f"frame shapes differ: {target.shape} vs {neighbor.shape}")
    if min(target.shape) < MIN_FLOW_SIZE:
        raise InvariantError(f"flow needs frames of at least {MIN_FLOW_SIZE} px, got {target.shape}")
    qt = build_gaussian_pyramid(target.y, FLOW_SCALE_LEVELS + 1)[-1]
    qn = build_gaussian_pyramid(neighbor.y, FLOW_SCALE_LEVELS + 1)[-1]
    u, v = _lk_pyramidal(qt, qn)
    s = 2 ** FLOW_SCALE_LEVELS
    return FlowField(s * resample(u, target.shape, 1.0 / s), s * resample(v, target.shape, 1.0 / s))


def sample_bilinear(p: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample ``p`` at ``(x+u, y+v)``; returns (values, in-bounds mask).

    The mask is 1 where every tap with non-zero weight lies inside the plane.
    Out-of-bounds taps are edge-clamped.
    """
    h, w = p.shape
    yy, xx = np.mgrid[0:h, 0:w]
    sx = xx + u
    sy = yy + v
    mask = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
    bot = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
    return top * (1 - fy) + bot * fy, mask.astype(np.float64)


def warp_backward(src: Frame, flow: FlowField):
    if flow.u.shape != src.shape or flow.v.shape != src.shape:
        raise ShapeError(f"flow {flow.u.shape} does not match frame {src.shape}")
    planes = []
    mask = None
    for p in src.planes:
        out, mask = sample_bilinear(p, flow.u, flow.v)
        planes.append(out)
    return Frame(*planes, index=src.index), mask


def align_neighbors(clip: Clip, t: int) -> AlignedSet:
    if not 0 <= t < len(clip):
        raise IndexError(f"frame index {t} out of range for a {len(clip)}-frame clip")
    target = clip[t]
    ones = np.ones(target.shape)
    neighbors, masks, flows, dup = [], [], [], []
    for off in OFFSETS:
        j = t + off
        if 0 <= j < len(clip):
            flow = estimate_flow(target, clip[j])
            warped, mask = warp_backward(clip[j], flow)
            neighbors.append(warped)
            masks.append(mask)
            flows.append(flow)
            dup.append(False)
        else:
            neighbors.append(target)
            masks.append(ones)
            flows.append(FlowField.zeros(target.shape))
            dup.append(True)
    return AlignedSet(target, tuple(neighbors), tuple(masks), tuple(flows), tuple(dup))
