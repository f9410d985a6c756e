"""Spatial denoising: bilateral filtering of Laplacian pyramid bands with per-pixel sigmas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, ShapeError
from .media import Frame
from .paramnet import N_LEVELS, ParamMaps
from .pyramid import build_laplacian, collapse_partial, LaplacianPyramid

RADII = (2, 2, 3)


def _offsets(radius: int):
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            yield dy, dx


def _pad_mode(p: np.ndarray, radius: int) -> str:
    return "reflect" if min(p.shape) > radius else "symmetric"


def _check(band, sigma_d, sigma_r, radius):
    if radius < 1:
        raise InvariantError("radius must be >= 1")
    if band.shape != sigma_d.shape or band.shape != sigma_r.shape:
        raise ShapeError(f"band {band.shape} and sigma maps {sigma_d.shape}/{sigma_r.shape} differ")
    if np.any(sigma_d < 0) or np.any(sigma_r < 0):
        raise InvariantError("bilateral sigmas must be non-negative")


def _kernel_pass(band, sigma_d, sigma_r, radius, with_grads=False):
    h, w = band.shape
    padded = np.pad(band, radius, mode=_pad_mode(band, radius))
    active = (sigma_d > 0) & (sigma_r > 0)
    sd = np.where(active, sigma_d, 1.0)
    sr = np.where(active, sigma_r, 1.0)
    inv_d = 1.0 / (2.0 * sd * sd)
    inv_r = 1.0 / (2.0 * sr * sr)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    terms = []
    for dy, dx in _offsets(radius):
        q = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
        dist2 = float(dy * dy + dx * dx)
        diff2 = (band - q) ** 2
        wgt = np.exp(-dist2 * inv_d - diff2 * inv_r)
        num += wgt * q
        den += wgt
        if with_grads:
            terms.append((q, dist2, diff2, wgt))
    out = np.where(active, num / den, band)
    return out, active, sd, sr, den, terms


def bilateral_varying(band: np.ndarray, sigma_d: np.ndarray, sigma_r: np.ndarray, radius: int) -> np.ndarray:
    """Bilateral filter with per-pixel spatial and range sigmas.

    A pixel whose ``sigma_d`` or ``sigma_r`` is zero is passed through unchanged.
    """
    band = np.asarray(band, dtype=np.float64)
    sigma_d = np.asarray(sigma_d, dtype=np.float64)
    sigma_r = np.asarray(sigma_r, dtype=np.float64)
    _check(band, sigma_d, sigma_r, radius)
    return _kernel_pass(band, sigma_d, sigma_r, radius)[0]


def d_bilateral_d_sigma(band, sigma_d, sigma_r, upstream, radius: int):
    """Gradients of ``sum(upstream * bilateral_varying(...))`` w.r.t. ``sigma_d`` and ``sigma_r``.

    Defined only where both sigmas are strictly positive.
    """
    band = np.asarray(band, dtype=np.float64)
    sigma_d = np.asarray(sigma_d, dtype=np.float64)
    sigma_r = np.asarray(sigma_r, dtype=np.float64)
    _check(band, sigma_d, sigma_r, radius)
    if np.any(sigma_d <= 0) or np.any(sigma_r <= 0):
        raise InvariantError("bilateral gradient requires strictly positive sigmas")
    out, _, sd, sr, den, terms = _kernel_pass(band, sigma_d, sigma_r, radius, with_grads=True)
    gd = np.zeros_like(band)
    gr = np.zeros_like(band)
    for q, dist2, diff2, wgt in terms:
        centered = wgt * (q - out)
        gd += centered * dist2
        gr += centered * diff2
    up = np.asarray(upstream, dtype=np.float64)
    return up * gd / (den * sd ** 3), up * gr / (den * sr ** 3)


@dataclass
class SpatialResult:
    frame: Frame
    levels: list          # per-level partial collapses, finest first, each (3, h_k, w_k)
    pyramids: list        # filtered LaplacianPyramid per channel


def _group_maps(maps: ParamMaps, ci: int):
    if ci == 0:
        return maps.sigmad_luma, maps.sigmar_luma
    return maps.sigmad_chroma, maps.sigmar_chroma


def filter_pyramid(pyr: LaplacianPyramid, sigmad, sigmar, radii=RADII) -> LaplacianPyramid:
    bands = []
    for k, band in enumerate(pyr.bands):
        if sigmad[k].shape != band.shape or sigmar[k].shape != band.shape:
            raise ShapeError(f"level {k}: maps {sigmad[k].shape}/{sigmar[k].shape} vs band {band.shape}")
        bands.append(bilateral_varying(band, sigmad[k], sigmar[k], radii[k]))
    return LaplacianPyramid(bands, pyr.residual)


def spatial_denoise(frame: Frame, maps: ParamMaps, radii=RADII) -> SpatialResult:
    if len(radii) != N_LEVELS:
        raise InvariantError(f"need {N_LEVELS} radii")
    planes, partials, pyrs = [], [], []
    for ci, plane in enumerate(frame.planes):
        sigmad, sigmar = _group_maps(maps, ci)
        pyr = filter_pyramid(build_laplacian(plane), sigmad, sigmar, radii)
        part = collapse_partial(pyr)
        planes.append(part[0])
        partials.append(part)
        pyrs.append(pyr)
    levels = [np.stack([partials[c][k] for c in range(3)]) for k in range(N_LEVELS)]
    return SpatialResult(Frame(*planes, index=frame.index), levels, pyrs)
