"""PSNR / SSIM, the multi-level reconstruction loss, and a finite-difference gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvariantError, ShapeError
from .media import Clip, Frame
from .pyramid import build_gaussian_pyramid

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.to_array()
    return np.asarray(x, dtype=np.float64)


def _psnr_arrays(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr(a, b) -> float:
    """PSNR in dB on the [0, 1] scale over all planes; clips average per-frame values."""
    if isinstance(a, Clip) or isinstance(b, Clip):
        if len(a) != len(b):
            raise ShapeError(f"clip lengths differ: {len(a)} vs {len(b)}")
        return float(np.mean([psnr(fa, fb) for fa, fb in zip(a, b)]))
    return _psnr_arrays(_as_array(a), _as_array(b))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    h, w = p.shape
    rows = sum(g[i] * p[:, i:w - n + 1 + i] for i in range(n))
    return sum(g[i] * rows[i:h - n + 1 + i] for i in range(n))


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WIN:
        raise InvariantError(f"SSIM needs planes of at least {SSIM_WIN}x{SSIM_WIN}")
    g = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    # symmetric in (a, b) by construction
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(a, b) -> float:
    """Single-scale SSIM of two planes. Frames compare their luma."""
    if isinstance(a, Frame):
        a = a.y
    if isinstance(b, Frame):
        b = b.y
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape == b.shape and np.array_equal(a, b):
        return 1.0
    return float(np.mean(ssim_map(a, b)))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    per_frame: list = field(default_factory=list)   # (psnr, ssim) per frame

    def records(self):
        for i, (p, s) in enumerate(self.per_frame):
            yield {"frame": i, "psnr": p, "ssim": s}


def compare_clips(ref: Clip, test: Clip) -> MetricReport:
    if len(ref) != len(test):
        raise ShapeError(f"clip lengths differ: {len(ref)} vs {len(test)}")
    per = [(psnr(a, b), ssim(a, b)) for a, b in zip(ref, test)]
    return MetricReport(float(np.mean([p for p, _ in per])), float(np.mean([s for _, s in per])), per)


# --------------------------------------------------------------------------
# reconstruction loss

def gt_levels(gt, n: int = 3) -> list[np.ndarray]:
    """Ground truth at each spatial pyramid level, finest first, as (C, h_k, w_k) arrays."""
    arr = _as_array(gt)
    if arr.ndim == 2:
        arr = arr[None]
    per_c = [build_gaussian_pyramid(p, n) for p in arr]
    return [np.stack([per_c[c][k] for c in range(len(per_c))]) for k in range(n)]


def rec_loss(temporal, spatial_levels: Sequence, gt) -> float:
    """||I_T - I_GT|| + sum_l ||I_ST_l - I_GT_l|| with unsquared Euclidean norms."""
    t = _as_array(temporal)
    g = _as_array(gt)
    if t.shape != g.shape:
        raise ShapeError(f"temporal {t.shape} vs ground truth {g.shape}")
    levels = gt_levels(g, len(spatial_levels))
    total = float(np.linalg.norm((t - g).ravel()))
    for k, (s, gl) in enumerate(zip(spatial_levels, levels)):
        s = _as_array(s)
        if s.ndim == 2:
            s = s[None]
        if s.shape != gl.shape:
            raise ShapeError(f"level {k}: {s.shape} vs {gl.shape}")
        total += float(np.linalg.norm((s - gl).ravel()))
    return total


# --------------------------------------------------------------------------
# gradient checking

def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise InvariantError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_check(f: Callable[[np.ndarray], float], analytic: np.ndarray, x: np.ndarray, h: float = 1e-4) -> float:
    """Max relative error between ``analytic`` and central differences of ``f`` at ``x``.

    Each coordinate's error is scaled by ``max(|analytic|, |numeric|)``, floored at
    1e-6 of the gradient's largest magnitude so that coordinates with a
    vanishing gradient are judged on an absolute scale instead.
    """
    numeric = numeric_gradient(f, x, h)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeError(f"analytic gradient {analytic.shape} vs point {numeric.shape}")
    scale = max(np.abs(numeric).max(), np.abs(analytic).max())
    if scale == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6 * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))
