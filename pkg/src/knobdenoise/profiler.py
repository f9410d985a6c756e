"""Noise profiles: theta = theta0 + delta, built from an anchor frame or a file."""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, ShapeError
from .flow import estimate_flow, warp_backward, MIN_FLOW_SIZE
from .media import Clip
from .paramnet import (HEADS, N_LEVELS, NetWeights, default_theta0, inverse_softplus)

log = logging.getLogger(__name__)

MAD_SCALE = 0.6745
MIN_MAD_SIZE = 16
RHO_CLAMP = (0.0, 0.9)
SIGMAD_LEVELS = (1.5, 1.5, 2.0)
SIGMAR_FACTOR = 2.0
# std of Laplacian band k for unit white noise; range distances are taken on bands,
# so the range sigma is expressed in each band's own noise units
BAND_NOISE_GAIN = (0.93, 0.22, 0.094)
SIGMA_FLOOR = 1e-6


def haar_hh(p: np.ndarray) -> np.ndarray:
    """Diagonal detail band of a one-level orthonormal Haar transform."""
    h, w = p.shape
    p = p[: h - h % 2, : w - w % 2]
    return 0.5 * (p[0::2, 0::2] - p[0::2, 1::2] - p[1::2, 0::2] + p[1::2, 1::2])


def estimate_noise_mad(p: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Robust noise std: median(|HH|) / 0.6745.

    ``weights`` (same shape as ``p``) restricts the median to HH coefficients
    whose 2x2 support is entirely non-zero.
    """
    p = np.asarray(p, dtype=np.float64)
    if min(p.shape) < MIN_MAD_SIZE:
        raise InvariantError(f"noise estimation needs at least {MIN_MAD_SIZE}x{MIN_MAD_SIZE} px")
    hh = np.abs(haar_hh(p))
    if weights is not None:
        m = np.asarray(weights) > 0
        m = m[: p.shape[0] - p.shape[0] % 2, : p.shape[1] - p.shape[1] % 2]
        keep = m[0::2, 0::2] & m[0::2, 1::2] & m[1::2, 0::2] & m[1::2, 1::2]
        hh = hh[keep]
        if hh.size == 0:
            return 0.0
    return float(np.median(hh) / MAD_SCALE)


@dataclass
class NoiseStats:
    sigma_hat_luma: float
    sigma_hat_chroma: float
    temporal_rho: float

    def __post_init__(self):
        if self.sigma_hat_luma < 0 or self.sigma_hat_chroma < 0:
            raise InvariantError("noise std must be non-negative")


@dataclass(eq=False)
class NoiseProfile:
    theta0: NetWeights
    delta: NetWeights
    stats: NoiseStats | None = None
    composed: NetWeights = field(init=False)

    def __post_init__(self):
        for name, arr in self.theta0.items():
            if self.delta[name].shape != arr.shape:
                raise ShapeError(f"delta tensor {name!r} has shape {self.delta[name].shape}, expected {arr.shape}")
        self.composed = self.theta0 + self.delta


def _chroma_sigma(frame, weights=None) -> float:
    s_cb = estimate_noise_mad(frame.cb, weights)
    s_cr = estimate_noise_mad(frame.cr, weights)
    return float(np.sqrt(0.5 * (s_cb ** 2 + s_cr ** 2)))


def temporal_correlation(clip: Clip, anchor: int) -> float:
    """Lag-1 temporal correlation of the noise around ``anchor``.

    The following frame (or the preceding one at the clip end) is warped onto
    the anchor. For aligned static content the Haar HH band of the difference
    has variance s_a^2 + s_b^2 - 2 rho s_a s_b, which is solved for rho using
    robust (MAD) scale estimates of all three bands. Returns the raw estimate
    clipped to [-1, 1].
    """
    if len(clip) < 2:
        return 0.0
    other = anchor + 1 if anchor + 1 < len(clip) else anchor - 1
    a, b = clip[anchor], clip[other]
    if min(a.shape) >= MIN_FLOW_SIZE:
        b, mask = warp_backward(b, estimate_flow(a, b))
    else:
        mask = np.ones(a.shape)
    s_a = estimate_noise_mad(a.y, mask)
    s_b = estimate_noise_mad(b.y, mask)
    s_d = estimate_noise_mad(a.y - b.y, mask)
    denom = 2.0 * s_a * s_b
    if denom <= 0:
        return 0.0
    return float(np.clip((s_a ** 2 + s_b ** 2 - s_d ** 2) / denom, -1.0, 1.0))


def noise_stats(clip: Clip, anchor: int = 0) -> NoiseStats:
    if not 0 <= anchor < len(clip):
        raise IndexError(f"anchor {anchor} out of range for a {len(clip)}-frame clip")
    f = clip[anchor]
    return NoiseStats(estimate_noise_mad(f.y), _chroma_sigma(f), temporal_correlation(clip, anchor))


def head_targets(stats: NoiseStats) -> dict:
    """Desired post-softplus head outputs for the classical profile."""
    rho = float(np.clip(stats.temporal_rho, *RHO_CLAMP))
    out = {}
    for group, s in (("luma", stats.sigma_hat_luma), ("chroma", stats.sigma_hat_chroma)):
        out[f"head_sigma2_{group}"] = np.array([s * s * (1.0 + rho)])
        out[f"head_sigmar_{group}"] = SIGMAR_FACTOR * s * np.array(BAND_NOISE_GAIN)
        out[f"head_sigmad_{group}"] = np.array(SIGMAD_LEVELS, dtype=np.float64)
    return out


def delta_for_targets(theta0: NetWeights, targets: dict) -> NetWeights:
    """Delta that is zero except on head biases, chosen so that softplus(theta0 + delta) hits ``targets``."""
    t = OrderedDict((k, np.zeros_like(v)) for k, v in theta0.items())
    for name in HEADS:
        want = inverse_softplus(targets[name], floor=SIGMA_FLOOR).astype(np.float32)
        t[f"{name}.bias"] = want - theta0[f"{name}.bias"]
    return NetWeights(t)


def classical_profile(clip: Clip, anchor: int = 0, theta0: NetWeights | None = None) -> NoiseProfile:
    theta0 = default_theta0() if theta0 is None else theta0
    stats = noise_stats(clip, anchor)
    log.debug("anchor %d: sigma_y=%.5f sigma_c=%.5f rho=%.3f", anchor,
              stats.sigma_hat_luma, stats.sigma_hat_chroma, stats.temporal_rho)
    return NoiseProfile(theta0, delta_for_targets(theta0, head_targets(stats)), stats)


def load_profile(theta0: NetWeights, path) -> NoiseProfile:
    return NoiseProfile(theta0, NetWeights.load(path))


def consistency_loss(delta_a: NetWeights, delta_b: NetWeights) -> float:
    """Unnormalized Euclidean distance between two profile deltas."""
    total = 0.0
    for name, a in delta_a.items():
        b = delta_b[name]
        if a.shape != b.shape:
            raise ShapeError(f"tensor {name!r}: {a.shape} vs {b.shape}")
        d = a.astype(np.float64) - b.astype(np.float64)
        total += float(np.dot(d.ravel(), d.ravel()))
    return float(np.sqrt(total))
